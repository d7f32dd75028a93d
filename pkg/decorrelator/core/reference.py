"""Source-level reference interpreter.

Runs a Program directly on its AST with the same predicate guard as the
obfuscated evaluator: a statement whose line does not exceed its
predicate's last executed line is skipped, otherwise the last line is
updated and the instruction runs when the predicate holds. Used as the
oracle for desugaring, lowering and functionality-preservation checks.
"""

from decorrelator.core.frontend import desugar_if, has_structured_control
from decorrelator.core.values import apply_binary, apply_unary, to_f32, wrap32, zero_of
from decorrelator.errors import EvaluationError, FuelExhausted
from decorrelator.models import Assign, Const, Goto, OutputRecord, Print, Program, Unary, Var

DEFAULT_FUEL = 10 ** 7


def _coerce(ty: str, value):
    if ty == "int":
        return wrap32(int(value))
    if ty == "float":
        return to_f32(float(value))
    return bool(value)


class _Machine:
    def __init__(self, program: Program, overrides: dict):
        self.types = program.types()
        self.store = {}
        for decl in program.declarations:
            initial = decl.initial.value if decl.initial is not None else zero_of(decl.ty)
            self.store[decl.name] = _coerce(decl.ty, initial)
        for name, value in overrides.items():
            if name not in self.types:
                raise EvaluationError(f"override for undeclared variable '{name}'")
            self.store[name] = _coerce(self.types[name], value)

    def eval(self, expr):
        """Return (value, type) of expr; operands are evaluated strictly."""
        if isinstance(expr, Const):
            return _coerce(expr.ty, expr.value), expr.ty
        if isinstance(expr, Var):
            return self.store[expr.name], self.types[expr.name]
        if isinstance(expr, Unary):
            value, ty = self.eval(expr.operand)
            return apply_unary(expr.op, ty, value), ty
        left, ty = self.eval(expr.left)
        right, _ = self.eval(expr.right)
        result = apply_binary(expr.op, ty, left, right)
        return result, ("bool" if isinstance(result, bool) else ty)

    def predicate(self, pred: str) -> bool:
        if pred == "true":
            return True
        if pred == "false":
            return False
        return self.store[pred]


def interpret(program: Program, fuel: int = DEFAULT_FUEL, overrides: dict = None) -> list[OutputRecord]:
    """Run program and return its print records in execution order.

    overrides replaces initial values of declared variables, which lets
    tests sweep condition variables without editing the source.
    """
    if has_structured_control(program):
        program = desugar_if(program)
    machine = _Machine(program, overrides or {})
    statements = program.statements
    labels = {s.label: i for i, s in enumerate(statements) if s.label}
    for label in program.end_labels:
        labels[label] = len(statements)
    last: dict[str, int] = {}
    outputs: list[OutputRecord] = []
    ip = 0
    steps = 0
    while ip < len(statements):
        if steps >= fuel:
            raise FuelExhausted(f"fuel of {fuel} steps exhausted")
        steps += 1
        stmt = statements[ip]
        if ip <= last.get(stmt.predicate, -1):
            ip += 1
            continue
        last[stmt.predicate] = ip
        if not machine.predicate(stmt.predicate):
            ip += 1
            continue
        inst = stmt.instruction
        if isinstance(inst, Assign):
            value, _ = machine.eval(inst.value)
            machine.store[inst.target] = _coerce(machine.types[inst.target], value)
        elif isinstance(inst, Print):
            value, _ = machine.eval(inst.value)
            outputs.append(OutputRecord(inst.fmt, value, ip))
        elif isinstance(inst, Goto):
            for pred in tuple(inst.reset_first) + tuple(inst.reset_second):
                last[pred] = -1
            if inst.target not in labels:
                raise EvaluationError(f"goto to unknown label '{inst.target}'")
            ip = labels[inst.target]
            continue
        ip += 1
    return outputs


def rendered(outputs: list[OutputRecord]) -> list[str]:
    return [record.render() for record in outputs]
