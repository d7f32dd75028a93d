"""`decorrelator compile`: source programs in, listing and trusted material out."""

import logging
from pathlib import Path

from app.commands import add_compile_flags, add_dir_flag, config_from_args
from decorrelator import artifacts
from decorrelator.core.compiler import compile_programs
from decorrelator.core.frontend import load_program
from decorrelator.core.programs import demo_pair
from decorrelator.errors import ConfigError

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("compile", help="merge and obfuscate L_cfi programs")
    parser.add_argument("inputs", nargs="*", type=Path, help="L_cfi source files, one program each")
    parser.add_argument("--demo", action="store_true", help="compile the bundled two-program demo")
    add_dir_flag(parser)
    add_compile_flags(parser)
    parser.set_defaults(func=cmd_compile)


def cmd_compile(args) -> int:
    if not args.inputs and not args.demo:
        raise ConfigError("at least one input program is required")
    config = config_from_args(args, inputs=list(args.inputs))
    programs = [load_program(path) for path in args.inputs]
    if args.demo:
        programs.extend(demo_pair())
    result = compile_programs(programs, config)
    base = artifacts.save_compile_result(result, config.artifact_dir)
    print(f"compiled {len(programs)} program(s) into {len(result.program.statements)} statements")
    print(f"listing: {base / artifacts.LISTING_FILE}")
    return 0
