"""Overhead benchmark: solo obfuscated runs against one merged run.

Each solo program is compiled on its own and run through the same
evaluator and runtime as the merged program, with the merged run's shuffle
period, so the ratio isolates the cost of interleaving. Timings are
monotonic wall-clock, summarised as a median of means.
"""

import logging
import statistics
import time
from typing import Callable, Optional

from decorrelator.config import RunConfig
from decorrelator.core.compiler import compile_programs
from decorrelator.core.evaluator import outputs_by_origin, run
from decorrelator.models import BenchReport, CompileResult, Program

logger = logging.getLogger(__name__)

MIN_REPETITIONS = 10


def median_of_means(samples: list[float], groups: int = 5) -> float:
    """Split samples into groups, average each, return the median average."""
    if not samples:
        raise ValueError("no samples to summarise")
    groups = max(1, min(groups, len(samples)))
    size = len(samples) // groups
    means = [statistics.fmean(samples[g * size:(g + 1) * size]) for g in range(groups)]
    return statistics.median(means)


def time_run(compiled: CompileResult, repetitions: int, fuel: int,
             clock: Callable[[], float] = time.perf_counter) -> tuple[float, list]:
    """Run compiled repetitions times without tracing; return (seconds, last outputs)."""
    samples = []
    outputs = []
    for _ in range(repetitions):
        start = clock()
        result = run(compiled.program, compiled.key, compiled.layout, fuel=fuel, record_trace=False)
        samples.append(clock() - start)
        outputs = result.outputs
    return median_of_means(samples), outputs


def bench(programs: list[Program], config: Optional[RunConfig] = None,
          repetitions: int = MIN_REPETITIONS) -> BenchReport:
    """Measure the merged run against the sum of the solo runs."""
    config = config or RunConfig()
    if repetitions < 1:
        raise ValueError("repetitions must be positive")
    period = config.shuffle_period if config.shuffle_period is not None else len(programs)
    config = config.with_overrides(shuffle_period=period)

    merged = compile_programs(programs, config)
    merged_seconds, merged_outputs = time_run(merged, repetitions, config.fuel)

    solo_seconds = {}
    solo_values = {}
    for program in programs:
        compiled = compile_programs([program], config)
        seconds, outputs = time_run(compiled, repetitions, config.fuel)
        solo_seconds[program.name] = seconds
        solo_values[program.name] = [record.value for record in outputs]
        logger.info("solo %s: %.4f s", program.name, seconds)

    grouped = outputs_by_origin(merged_outputs, merged.provenance.origins)
    outputs_match = all(
        [record.value for record in grouped.get(name, [])] == values for name, values in solo_values.items()
    )
    if not outputs_match:
        logger.warning("merged outputs differ from solo outputs")
    solo_sum = sum(solo_seconds.values())
    overhead = (merged_seconds / solo_sum - 1.0) * 100.0 if solo_sum > 0 else 0.0
    logger.info("merged: %.4f s against %.4f s solo, overhead %.2f%%", merged_seconds, solo_sum, overhead)
    return BenchReport(
        solo_seconds=solo_seconds,
        solo_sum=solo_sum,
        merged_seconds=merged_seconds,
        overhead_percent=overhead,
        repetitions=repetitions,
        outputs_match=outputs_match,
        uniformized=config.uniformize,
    )


def bench_report_to_dict(report: BenchReport) -> dict:
    return {
        "solo_seconds": report.solo_seconds,
        "solo_sum": report.solo_sum,
        "merged_seconds": report.merged_seconds,
        "overhead_percent": report.overhead_percent,
        "repetitions": report.repetitions,
        "outputs_match": report.outputs_match,
        "uniformized": report.uniformized,
    }
