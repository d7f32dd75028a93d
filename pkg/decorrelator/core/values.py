"""Scalar value semantics shared by the evaluator and the reference interpreter.

Integers are 32-bit two's complement with wrapping; division truncates
toward zero. Floats are IEEE-754 binary32: results are rounded to nearest
and overflow to +-inf. Bools are one byte (0 or 1).
"""

import numpy as np

from decorrelator.errors import EvaluationError
from decorrelator.models import TYPE_WIDTHS

_F32 = np.dtype("<f4")


def wrap32(value: int) -> int:
    return ((value + 0x80000000) & 0xFFFFFFFF) - 0x80000000


def _as_f32(value) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.asarray(float(value), dtype=np.float64).astype(_F32)


def to_f32(value: float) -> float:
    return float(_as_f32(value))


def int_div(a: int, b: int) -> int:
    if b == 0:
        raise EvaluationError("division by zero")
    q = abs(a) // abs(b)
    return wrap32(q if (a < 0) == (b < 0) else -q)


def int_mod(a: int, b: int) -> int:
    if b == 0:
        raise EvaluationError("division by zero")
    return wrap32(a - b * int_div(a, b))


def float_div(a: float, b: float) -> float:
    if b == 0.0:
        raise EvaluationError("division by zero")
    return to_f32(a / b)


def encode(ty: str, value) -> bytes:
    if ty == "int":
        return wrap32(int(value)).to_bytes(4, "little", signed=True)
    if ty == "bool":
        return b"\x01" if value else b"\x00"
    if ty == "float":
        return _as_f32(value).tobytes()
    raise EvaluationError(f"unknown value type {ty!r}")


def decode(ty: str, raw: bytes):
    if ty == "int":
        return int.from_bytes(raw, "little", signed=True)
    if ty == "bool":
        return raw[0] != 0
    if ty == "float":
        return float(np.frombuffer(raw, dtype=_F32)[0])
    raise EvaluationError(f"unknown value type {ty!r}")


def width_of(ty: str) -> int:
    return TYPE_WIDTHS[ty]


def zero_of(ty: str):
    return {"int": 0, "bool": False, "float": 0.0}[ty]


# Operator tables keyed by (source operator, operand type). Comparison and
# logic results are bool; arithmetic keeps the operand type.
ARITHMETIC = {
    ("+", "int"): lambda a, b: wrap32(a + b),
    ("-", "int"): lambda a, b: wrap32(a - b),
    ("*", "int"): lambda a, b: wrap32(a * b),
    ("/", "int"): int_div,
    ("%", "int"): int_mod,
    ("+", "float"): lambda a, b: to_f32(a + b),
    ("-", "float"): lambda a, b: to_f32(a - b),
    ("*", "float"): lambda a, b: to_f32(a * b),
    ("/", "float"): float_div,
}

COMPARISON = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}

LOGIC = {
    "&&": lambda a, b: a and b,
    "||": lambda a, b: a or b,
}


def apply_unary(op: str, ty: str, value):
    if op == "-":
        return wrap32(-value) if ty == "int" else to_f32(-value)
    if op == "!" or (op == "~" and ty == "bool"):
        return not value
    if op == "~":
        return wrap32(~value)
    raise EvaluationError(f"unknown unary operator {op!r}")


def apply_binary(op: str, ty: str, left, right):
    """Apply a source operator to two operands of type ty."""
    if op in COMPARISON:
        return COMPARISON[op](left, right)
    if op in LOGIC:
        return LOGIC[op](left, right)
    try:
        fn = ARITHMETIC[(op, ty)]
    except KeyError:
        raise EvaluationError(f"operator {op!r} is not defined on {ty}") from None
    return fn(left, right)
