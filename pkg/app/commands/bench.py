"""`decorrelator bench`: solo versus merged runtime of the benchmark pair."""

import json

from app.commands import add_compile_flags, add_dir_flag, config_from_args, templates
from decorrelator import artifacts
from decorrelator.core.bench import MIN_REPETITIONS, bench, bench_report_to_dict
from decorrelator.core.programs import AVERAGE_SIZE, DOT_SIZE, bench_pair


def register(subparsers) -> None:
    parser = subparsers.add_parser("bench", help="measure the overhead of running the benchmark pair merged")
    add_dir_flag(parser)
    add_compile_flags(parser)
    parser.add_argument("--average-n", type=int, default=AVERAGE_SIZE, help="elements averaged by the first program")
    parser.add_argument("--dot-n", type=int, default=DOT_SIZE, help="vector length of the dot product")
    parser.add_argument("--repetitions", type=int, default=MIN_REPETITIONS)
    parser.add_argument("--json", action="store_true", help="print the report as JSON")
    parser.set_defaults(func=cmd_bench)


def cmd_bench(args) -> int:
    config = config_from_args(args)
    report = bench(bench_pair(args.average_n, args.dot_n), config, repetitions=args.repetitions)
    data = bench_report_to_dict(report)
    artifacts.save_report({"bench": data})
    if args.json:
        print(json.dumps(data, indent=2))
    else:
        print(templates.get_template("bench.txt.j2").render(report=report), end="")
    return 0
