import argparse
import logging
import os
import sys
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

from app.commands import analyze, bench, run
from app.commands import compile as compile_cmd
from decorrelator.artifacts import override_artifact_dir
from decorrelator.errors import (
    CompileError, ConfigError, DecorrelatorError, EvaluationError, FuelExhausted, LayoutError,
    LcfiSyntaxError, ProgramError, TrustedMaterialUnavailable,
)

EXIT_OK = 0
EXIT_PROGRAM = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3
EXIT_FUEL = 4
EXIT_TRUSTED = 5

# first match wins
_EXIT_CODES = (
    (TrustedMaterialUnavailable, EXIT_TRUSTED),
    (FuelExhausted, EXIT_FUEL),
    (EvaluationError, EXIT_RUNTIME),
    (ConfigError, EXIT_USAGE),
    ((LcfiSyntaxError, ProgramError, CompileError, LayoutError), EXIT_PROGRAM),
    (DecorrelatorError, EXIT_RUNTIME),
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decorrelator", description="Instruction-decorrelating obfuscator")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in (compile_cmd, run, bench, analyze):
        command.register(subparsers)
    return parser


def configure_logging(verbose: int) -> None:
    if verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = os.environ.get("DECORRELATOR_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


def exit_code_for(exc: DecorrelatorError) -> int:
    for kinds, code in _EXIT_CODES:
        if isinstance(exc, kinds):
            return code
    return EXIT_RUNTIME


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    configure_logging(args.verbose)
    try:
        if args.dir is not None:
            with override_artifact_dir(Path(args.dir)):
                return args.func(args)
        return args.func(args)
    except DecorrelatorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except FileNotFoundError as exc:
        print(f"error: {exc.strerror}: {exc.filename}", file=sys.stderr)
        return EXIT_PROGRAM
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
