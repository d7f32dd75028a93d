"""Untrusted evaluator for obfuscated programs.

The instruction pointer lives here, outside the trusted boundary. Every
operand, predicate and reset is reached by asking the TrustedRuntime to
resolve an obfuscated ID to physical addresses, then reading or writing
those bytes of untrusted memory directly.

A predicate reference resolves five bytes: the boolean value followed by
the 4-byte last-line field. A statement runs only when its line is beyond
the predicate's last line; visiting it records the line even when the
predicate is false.
"""

import json
import logging
from pathlib import Path
from typing import Optional

from decorrelator.core.lowering import opcode_spec
from decorrelator.core.tee import TrustedRuntime
from decorrelator.core.values import apply_binary, apply_unary, decode, encode, width_of
from decorrelator.errors import EvaluationError, FuelExhausted
from decorrelator.models import (
    BOOL_WIDTH, LAST_LINE_WIDTH, EvaluatorState, ExecutionTrace, FlatLayout, KeyMaterial, ObfStatement,
    ObfuscatedProgram, OutputRecord, RunResult, TraceAccess, TraceStep,
)

logger = logging.getLogger(__name__)

DEFAULT_FUEL = 10 ** 7
PREDICATE_WIDTH = BOOL_WIDTH + LAST_LINE_WIDTH
_NO_LAST_LINE = encode("int", -1)


def predicate_guard(value: bool, last_line: int, current_line: int) -> tuple[bool, int]:
    """(execute?, new last line) for one visit of a predicated statement.

    A line equal to the recorded one is skipped as well: after a backward
    jump of another program, the last statement this predicate ran would
    otherwise run a second time.
    """
    if current_line <= last_line:
        return False, last_line
    return bool(value), current_line


class _Session:
    """One run: runtime, memory, trace sink."""

    def __init__(self, runtime: TrustedRuntime, record: bool):
        self.runtime = runtime
        self.memory = runtime.memory
        self.record = record
        self.accesses: list[TraceAccess] = []

    def _note(self, r: int, addresses: list[int], written: bool) -> None:
        shuffled = self.runtime.drain_shuffle_events()
        if self.record:
            self.accesses.append(TraceAccess(r, tuple(addresses), written, shuffled))

    def read(self, r: int, ty: str):
        addresses = self.runtime.resolve(r, width_of(ty))
        self._note(r, addresses, False)
        return decode(ty, self.memory.read(addresses))

    def write(self, r: int, ty: str, value) -> None:
        addresses = self.runtime.resolve(r, width_of(ty))
        self._note(r, addresses, True)
        self.memory.write(addresses, encode(ty, value))

    def predicate(self, r: int, current_line: int) -> bool:
        addresses = self.runtime.resolve(r, PREDICATE_WIDTH)
        raw = self.memory.read(addresses)
        value = decode("bool", raw[:BOOL_WIDTH])
        last = decode("int", raw[BOOL_WIDTH:])
        execute, new_last = predicate_guard(value, last, current_line)
        updated = new_last != last
        if updated:
            self.memory.write(addresses[BOOL_WIDTH:], encode("int", new_last))
        self._note(r, addresses, updated)
        return execute

    def reset(self, r: int) -> None:
        addresses = self.runtime.resolve(r, PREDICATE_WIDTH)
        self.memory.write(addresses[BOOL_WIDTH:], _NO_LAST_LINE)
        self._note(r, addresses, True)

    def take(self) -> tuple:
        accesses = tuple(self.accesses)
        self.accesses = []
        return accesses


def eval_predicate(runtime: TrustedRuntime, r: int, current_line: int) -> bool:
    """Evaluate the predicate referenced by r at current_line (guard included)."""
    return _Session(runtime, record=False).predicate(r, current_line)


def exec_goto(runtime: TrustedRuntime, stmt: ObfStatement, labels: dict) -> int:
    """Reset both predicate lists of a goto and return the target index."""
    session = _Session(runtime, record=False)
    return _goto(session, stmt, labels)


def _goto(session: _Session, stmt: ObfStatement, labels: dict) -> int:
    if stmt.target not in labels:
        raise EvaluationError(f"goto to unknown label {stmt.target}")
    for r in tuple(stmt.resets[0]) + tuple(stmt.resets[1]):
        session.reset(r)
    return labels[stmt.target]


def label_positions(program: ObfuscatedProgram) -> dict[str, int]:
    labels = {s.label: i for i, s in enumerate(program.statements) if s.label}
    if program.end_label:
        labels[program.end_label] = len(program.statements)
    return labels


def _execute(session: _Session, stmt: ObfStatement, ip: int, state: EvaluatorState, labels: dict) -> int:
    spec = opcode_spec(stmt.opcode)
    if spec.kind == "goto":
        return _goto(session, stmt, labels)
    if spec.kind == "print":
        value = session.read(stmt.operands[0], spec.operand_ty)
        state.outputs.append(OutputRecord(stmt.text or "", value, ip))
        return ip + 1
    dst, *sources = stmt.operands
    values = [session.read(r, spec.operand_ty) for r in sources]
    if spec.arity == 1:
        result = values[0] if spec.op is None else apply_unary(spec.op, spec.operand_ty, values[0])
    else:
        result = apply_binary(spec.op, spec.operand_ty, values[0], values[1])
    session.write(dst, spec.result_ty, result)
    return ip + 1


def run(program: ObfuscatedProgram, key: KeyMaterial, flat: FlatLayout, fuel: int = DEFAULT_FUEL,
        runtime: Optional[TrustedRuntime] = None, record_trace: bool = True) -> RunResult:
    """Execute program from IP 0 until the IP passes the last statement.

    runtime defaults to a fresh TrustedRuntime over key and flat. Raises
    FuelExhausted after fuel statement visits.
    """
    if fuel <= 0:
        raise EvaluationError("fuel must be positive")
    runtime = runtime or TrustedRuntime(key, flat)
    session = _Session(runtime, record_trace)
    labels = label_positions(program)
    state = EvaluatorState()
    trace = ExecutionTrace(page_bits=program.page_bits)
    statements = program.statements
    while state.ip < len(statements):
        if state.step_count >= fuel:
            raise FuelExhausted(f"fuel of {fuel} steps exhausted at statement {state.ip}")
        stmt = statements[state.ip]
        line = state.ip
        executed = session.predicate(stmt.predicate, line)
        state.ip = _execute(session, stmt, line, state, labels) if executed else line + 1
        runtime.end_statement()
        state.step_count += 1
        accesses = session.take()
        if record_trace:
            trace.steps.append(TraceStep(state.step_count - 1, line, stmt.opcode, executed, accesses))
    logger.info("run finished after %d steps with %d outputs, %d shuffles",
                state.step_count, len(state.outputs), runtime.stats.shuffles)
    return RunResult(outputs=list(state.outputs), trace=trace, state=state)


def outputs_by_origin(outputs: list[OutputRecord], origins: list[str]) -> dict[str, list[OutputRecord]]:
    """Group print records by the source program of the printing statement."""
    grouped: dict[str, list[OutputRecord]] = {}
    for record in outputs:
        grouped.setdefault(origins[record.line], []).append(record)
    return grouped


# ── Trace serialization ───────────────────────────────────────────────────────

TRACE_FIELDS = ("step", "line", "opcode", "executed", "accesses")
ACCESS_FIELDS = ("id", "physical", "written", "shuffled")


def trace_to_lines(trace: ExecutionTrace):
    yield json.dumps({"page_bits": trace.page_bits})
    for step in trace.steps:
        yield json.dumps({
            "step": step.step,
            "line": step.line,
            "opcode": step.opcode,
            "executed": step.executed,
            "accesses": [
                {"id": a.obf_id, "physical": list(a.physical), "written": a.written, "shuffled": list(a.shuffled)}
                for a in step.accesses
            ],
        })


def write_trace(trace: ExecutionTrace, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for line in trace_to_lines(trace):
            fh.write(line + "\n")


def read_trace(path) -> ExecutionTrace:
    trace = ExecutionTrace()
    with Path(path).open(encoding="utf-8") as fh:
        for number, line in enumerate(fh):
            if not line.strip():
                continue
            data = json.loads(line)
            if number == 0 and "page_bits" in data:
                trace.page_bits = int(data["page_bits"])
                continue
            accesses = tuple(
                TraceAccess(a["id"], tuple(a["physical"]), a["written"], tuple(a["shuffled"]))
                for a in data["accesses"]
            )
            trace.steps.append(TraceStep(data["step"], data["line"], data["opcode"], data["executed"], accesses))
    return trace


def render_outputs(outputs: list[OutputRecord]) -> str:
    return "".join(record.render() + "\n" for record in outputs)
