import json
from dataclasses import replace

import pytest

from decorrelator.config import RunConfig
from decorrelator.core.compiler import compile_programs, listing_ids
from decorrelator.core.evaluator import (
    ACCESS_FIELDS, TRACE_FIELDS, eval_predicate, exec_goto, label_positions, outputs_by_origin,
    predicate_guard, read_trace, render_outputs, run, trace_to_lines, write_trace,
)
from decorrelator.core.frontend import parse_program
from decorrelator.core.programs import DEMO_OUTPUTS, bench_pair, expected_average, expected_dot
from decorrelator.core.tee import TrustedRuntime
from decorrelator.core.values import decode
from decorrelator.errors import EvaluationError, FuelExhausted
from decorrelator.models import FlatLayout, KeyMaterial, LayoutEntry, ObfStatement, ObfuscatedProgram


def _predicate_runtime(value=True):
    flat = FlatLayout(entries={
        "p.c": LayoutEntry(0, 1, "var", "bool", value),
        "p.last.c": LayoutEntry(1, 4, "predicate-state", "int", -1),
    }, total_size=5)
    key = KeyMaterial(sk=11, alpha=2, beta=4, id_bound=1000, perm_seed=5, counter_bits=16, page_bits=8,
                      shuffle_period=None, data_size=5)
    return TrustedRuntime(key, flat)


def _last_line(runtime):
    return decode("int", runtime.read_label("p.last.c"))


def _values(outputs):
    return {name: [record.value for record in records] for name, records in outputs.items()}


# ── guard ─────────────────────────────────────────────────────────────────────

def test_predicate_guard_examples():
    assert predicate_guard(True, -1, 5) == (True, 5)
    assert predicate_guard(True, 7, 5) == (False, 7)
    assert predicate_guard(False, -1, 3) == (False, 3)
    assert predicate_guard(True, 5, 5) == (False, 5)


def test_eval_predicate_records_last_line_even_when_false():
    runtime = _predicate_runtime(value=False)
    assert eval_predicate(runtime, 0, 3) is False
    assert _last_line(runtime) == 3
    assert eval_predicate(runtime, 11, 2) is False
    assert _last_line(runtime) == 3


def test_eval_predicate_true_runs_once_per_line():
    runtime = _predicate_runtime(value=True)
    assert eval_predicate(runtime, 22, 5) is True
    assert _last_line(runtime) == 5
    assert eval_predicate(runtime, 33, 5) is False
    assert eval_predicate(runtime, 44, 6) is True


def test_exec_goto_resets_predicates():
    runtime = _predicate_runtime()
    eval_predicate(runtime, 0, 9)
    stmt = ObfStatement(predicate=0, opcode="goto", target="L7", resets=((11,), ()))
    assert exec_goto(runtime, stmt, {"L7": 2}) == 2
    assert _last_line(runtime) == -1
    with pytest.raises(EvaluationError):
        exec_goto(runtime, ObfStatement(0, "goto", target="L8"), {"L7": 2})


def test_label_positions_include_end_label():
    program = ObfuscatedProgram(statements=[ObfStatement(0, "mov.i", (1, 2), label="L1")], end_label="L2")
    assert label_positions(program) == {"L1": 0, "L2": 1}


# ── runs ──────────────────────────────────────────────────────────────────────

def test_single_program_prints_its_sum(demo_pair):
    result = compile_programs([demo_pair[0]], RunConfig(seed=1))
    outcome = run(result.program, result.key, result.layout)
    assert render_outputs(outcome.outputs) == '"sum", 45\n'


def test_merged_pair_preserves_outputs_over_many_seeds(demo_pair):
    for seed in range(50):
        result = compile_programs(demo_pair, RunConfig(seed=seed))
        outcome = run(result.program, result.key, result.layout)
        grouped = outputs_by_origin(outcome.outputs, result.provenance.origins)
        assert _values(grouped) == {name: [value] for name, value in DEMO_OUTPUTS.items()}


def test_junk_does_not_change_outputs(demo_pair):
    plain = compile_programs(demo_pair, RunConfig(seed=4, uniformize=False))
    padded = compile_programs(demo_pair, RunConfig(seed=4, junk_programs=1, junk_ratio=50.0))
    assert sum(padded.provenance.padding) > 0
    plain_out = run(plain.program, plain.key, plain.layout).outputs
    padded_out = run(padded.program, padded.key, padded.layout).outputs
    assert _values(outputs_by_origin(plain_out, plain.provenance.origins)) == \
        _values(outputs_by_origin(padded_out, padded.provenance.origins))


def test_bench_programs_compute_expected_values():
    result = compile_programs(bench_pair(average_n=30, dot_n=40), RunConfig(seed=2))
    outcome = run(result.program, result.key, result.layout)
    grouped = _values(outputs_by_origin(outcome.outputs, result.provenance.origins))
    assert grouped == {"average": [expected_average(30)], "dot": [expected_dot(40)]}


def test_all_false_predicates_print_nothing():
    program = parse_program('bool c\nint a\nc : a = 1\nc : print("a", a)', name="quiet")
    result = compile_programs([program], RunConfig(seed=3))
    outcome = run(result.program, result.key, result.layout)
    assert outcome.outputs == []
    assert not any(step.executed for step in outcome.trace.steps)


def test_fuel_exhaustion(demo_compiled):
    with pytest.raises(FuelExhausted):
        run(demo_compiled.program, demo_compiled.key, demo_compiled.layout, fuel=5)
    with pytest.raises(EvaluationError):
        run(demo_compiled.program, demo_compiled.key, demo_compiled.layout, fuel=0)


def test_shuffling_changes_trace_not_outputs(demo_compiled):
    never = replace(demo_compiled.key, shuffle_period=None)
    always = replace(demo_compiled.key, shuffle_period=1)
    quiet = run(demo_compiled.program, never, demo_compiled.layout)
    busy = run(demo_compiled.program, always, demo_compiled.layout)
    assert render_outputs(quiet.outputs) == render_outputs(busy.outputs)
    physical = [[a.physical for a in s.accesses] for s in quiet.trace.steps]
    shuffled_physical = [[a.physical for a in s.accesses] for s in busy.trace.steps]
    assert physical != shuffled_physical
    assert not any(a.shuffled for s in quiet.trace.steps for a in s.accesses)
    assert any(a.shuffled for s in busy.trace.steps for a in s.accesses)


def test_trace_file_round_trip(demo_compiled, tmp_path):
    trace = run(demo_compiled.program, demo_compiled.key, demo_compiled.layout).trace
    path = tmp_path / "trace.jsonl"
    write_trace(trace, path)
    assert read_trace(path) == trace


def test_trace_carries_only_untrusted_fields(demo_compiled):
    trace = run(demo_compiled.program, demo_compiled.key, demo_compiled.layout).trace
    ids = set(listing_ids(demo_compiled.program))
    lines = list(trace_to_lines(trace))
    assert json.loads(lines[0]) == {"page_bits": demo_compiled.program.page_bits}
    for line in lines[1:]:
        step = json.loads(line)
        assert set(step) == set(TRACE_FIELDS)
        for access in step["accesses"]:
            assert set(access) == set(ACCESS_FIELDS)
            assert access["id"] in ids


def test_run_without_trace(demo_compiled):
    outcome = run(demo_compiled.program, demo_compiled.key, demo_compiled.layout, record_trace=False)
    assert outcome.trace.steps == []
    assert outcome.state.step_count > len(demo_compiled.program.statements)
