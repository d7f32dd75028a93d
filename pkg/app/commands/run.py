"""`decorrelator run`: execute the compiled listing and record its trace."""

import logging
from dataclasses import replace
from pathlib import Path

from app.commands import add_dir_flag, config_from_args
from decorrelator import artifacts
from decorrelator.core.evaluator import render_outputs, run

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("run", help="run the obfuscated program in the artifact directory")
    add_dir_flag(parser)
    parser.add_argument("--fuel", type=int, default=None)
    parser.add_argument("--shuffle-period", default=None,
                        help="override the compiled shuffle period; 0 or 'inf' disables shuffling")
    parser.add_argument("--trace", type=Path, default=None, help="trace path (default: <dir>/trace.jsonl)")
    parser.add_argument("--outputs", type=Path, default=None, help="outputs path (default: <dir>/outputs.txt)")
    parser.add_argument("--no-trace", dest="record_trace", action="store_false")
    parser.set_defaults(func=cmd_run)


def cmd_run(args) -> int:
    config = config_from_args(args, trace_path=args.trace, outputs_path=args.outputs)
    key = artifacts.load_key(config.artifact_dir)
    flat = artifacts.load_layout(config.artifact_dir)
    program = artifacts.load_listing(config.artifact_dir)
    if args.shuffle_period is not None:
        key = replace(key, shuffle_period=config.shuffle_period or None)
    result = run(program, key, flat, fuel=config.fuel, record_trace=args.record_trace)
    print(render_outputs(result.outputs), end="")
    artifacts.save_outputs(result.outputs, config.outputs_path)
    if args.record_trace:
        path = artifacts.save_trace(result.trace, config.trace_path)
        logger.info("trace of %d steps written to %s", len(result.trace.steps), path)
    return 0
