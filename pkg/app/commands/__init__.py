"""Shared pieces of the subcommands: RunConfig flags and report templates."""

import argparse
from pathlib import Path

from jinja2 import Environment, FileSystemLoader, StrictUndefined

from decorrelator.artifacts import get_artifact_dir
from decorrelator.config import RunConfig, parse_shuffle_period

templates = Environment(
    loader=FileSystemLoader(Path(__file__).parent.parent / "templates"),
    keep_trailing_newline=True,
    trim_blocks=True,
    lstrip_blocks=True,
    undefined=StrictUndefined,
)


def add_dir_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dir", type=Path, default=None,
                        help="artifact directory (default: DECORRELATOR_ARTIFACT_DIR or ~/.decorrelator/artifacts)")


def add_compile_flags(parser: argparse.ArgumentParser) -> None:
    """Flags that mirror the compile-side RunConfig fields."""
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--junk-seed", type=int, default=None)
    parser.add_argument("--perm-seed", type=int, default=None)
    parser.add_argument("--alpha", type=int, default=None)
    parser.add_argument("--beta", type=int, default=None)
    parser.add_argument("--id-bound", type=int, default=None)
    parser.add_argument("--page-bits", type=int, default=None)
    parser.add_argument("--counter-bits", type=int, default=None)
    parser.add_argument("--shuffle-period", default=None,
                        help="mean accesses between shuffles; 0 or 'inf' disables shuffling")
    parser.add_argument("--no-statement-shuffle", dest="statement_shuffle", action="store_false", default=None,
                        help="only shuffle on the access-count period, not after every statement")
    parser.add_argument("--junk-ratio", type=float, default=None)
    parser.add_argument("--junk-programs", type=int, default=None)
    parser.add_argument("--no-uniformize", dest="uniformize", action="store_false", default=None,
                        help="skip junk insertion and opcode equalisation")
    parser.add_argument("--no-infer-resets", dest="infer_resets", action="store_false", default=None)
    parser.add_argument("--fuel", type=int, default=None)


def config_from_args(args: argparse.Namespace, **extra) -> RunConfig:
    """RunConfig from env and defaults, overridden by whichever flags were given."""
    overrides = {
        name: getattr(args, name, None)
        for name in ("seed", "junk_seed", "perm_seed", "alpha", "beta", "id_bound", "page_bits",
                     "counter_bits", "statement_shuffle", "junk_ratio", "junk_programs", "uniformize",
                     "infer_resets", "fuel")
    }
    overrides["shuffle_period"] = parse_shuffle_period(getattr(args, "shuffle_period", None))
    overrides["artifact_dir"] = get_artifact_dir()
    overrides.update(extra)
    return RunConfig.from_env(**overrides)
