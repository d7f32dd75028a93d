"""Three-address lowering of predicated programs.

After lowering every statement carries exactly one typed opcode: an
assignment whose right-hand side is an atom (mov), a unary operator on an
atom, or a binary operator on two atoms; a print of an atom; or a goto.
Sub-expressions are spilled into fresh temporaries that run under the
statement's own predicate, so the guard sequence is unchanged.
"""

import logging

from decorrelator.core.frontend import FreshNames, desugar_if, has_structured_control, result_type
from decorrelator.core.values import apply_unary, to_f32, wrap32
from decorrelator.errors import CompileError
from decorrelator.models import (
    Assign, Binary, Const, Declaration, Goto, OpcodeSpec, Print, Program, Statement, Unary, Var,
)

logger = logging.getLogger(__name__)

SUFFIX = {"int": "i", "float": "f", "bool": "b"}
TYPE_OF_SUFFIX = {v: k for k, v in SUFFIX.items()}

_ARITH_NAMES = {"+": "add", "-": "sub", "*": "mul", "/": "div", "%": "mod"}
_CMP_NAMES = {"<": "lt", "<=": "le", ">": "gt", ">=": "ge", "==": "eq", "!=": "ne"}
_LOGIC_NAMES = {"&&": "and", "||": "or"}


def _build_opcodes() -> dict[str, OpcodeSpec]:
    table = {}

    def add(spec: OpcodeSpec):
        table[spec.name] = spec

    for ty, s in SUFFIX.items():
        add(OpcodeSpec(f"mov.{s}", "assign", None, ty, ty, 1))
        add(OpcodeSpec(f"print.{s}", "print", None, ty, None, 1))
    add(OpcodeSpec("neg.i", "assign", "-", "int", "int", 1))
    add(OpcodeSpec("neg.f", "assign", "-", "float", "float", 1))
    add(OpcodeSpec("not.b", "assign", "!", "bool", "bool", 1))
    add(OpcodeSpec("not.i", "assign", "~", "int", "int", 1))
    for op, name in _ARITH_NAMES.items():
        for ty in ("int", "float"):
            if op == "%" and ty == "float":
                continue
            add(OpcodeSpec(f"{name}.{SUFFIX[ty]}", "assign", op, ty, ty, 2))
    for op, name in _LOGIC_NAMES.items():
        add(OpcodeSpec(f"{name}.b", "assign", op, "bool", "bool", 2))
    for op, name in _CMP_NAMES.items():
        types = ("int", "float", "bool") if op in ("==", "!=") else ("int", "float")
        for ty in types:
            add(OpcodeSpec(f"{name}.{SUFFIX[ty]}", "assign", op, ty, "bool", 2))
    add(OpcodeSpec("goto", "goto"))
    return table


OPCODES = _build_opcodes()


def is_atom(expr) -> bool:
    return isinstance(expr, (Const, Var))


def expr_type(expr, types: dict) -> str:
    """Static type of a validated expression."""
    if isinstance(expr, Const):
        return expr.ty
    if isinstance(expr, Var):
        return types[expr.name]
    if isinstance(expr, Unary):
        return expr_type(expr.operand, types)
    ty = result_type(expr.op, expr_type(expr.left, types))
    if ty is None:
        raise CompileError(f"operator {expr.op!r} has no typed opcode")
    return ty


def opcode_of(statement: Statement, types: dict) -> str:
    """Typed opcode of a lowered statement."""
    inst = statement.instruction
    if isinstance(inst, Goto):
        return "goto"
    if isinstance(inst, Print):
        return f"print.{SUFFIX[expr_type(inst.value, types)]}"
    value = inst.value
    if is_atom(value):
        return f"mov.{SUFFIX[types[inst.target]]}"
    if isinstance(value, Unary):
        ty = expr_type(value.operand, types)
        if value.op == "-":
            return f"neg.{SUFFIX[ty]}"
        return "not.b" if ty == "bool" else "not.i"
    ty = expr_type(value.left, types)
    if value.op in _ARITH_NAMES:
        return f"{_ARITH_NAMES[value.op]}.{SUFFIX[ty]}"
    if value.op in _LOGIC_NAMES:
        return f"{_LOGIC_NAMES[value.op]}.b"
    return f"{_CMP_NAMES[value.op]}.{SUFFIX[ty]}"


def operands_of(statement: Statement) -> tuple:
    """Atoms referenced by a lowered statement, destination first."""
    inst = statement.instruction
    if isinstance(inst, Goto):
        return ()
    if isinstance(inst, Print):
        return (inst.value,)
    value = inst.value
    if is_atom(value):
        return (Var(inst.target), value)
    if isinstance(value, Unary):
        return (Var(inst.target), value.operand)
    return (Var(inst.target), value.left, value.right)


def is_lowered(statement: Statement) -> bool:
    inst = statement.instruction
    if isinstance(inst, Goto):
        return True
    if isinstance(inst, Print):
        return is_atom(inst.value)
    value = inst.value
    if is_atom(value):
        return True
    if isinstance(value, Unary):
        return is_atom(value.operand)
    return is_atom(value.left) and is_atom(value.right)


def _fold(expr):
    """Fold unary operators applied to literals so `-1` becomes one constant."""
    if isinstance(expr, Unary):
        operand = _fold(expr.operand)
        if isinstance(operand, Const):
            value = apply_unary(expr.op, operand.ty, operand.value)
            return Const(value, operand.ty)
        return Unary(expr.op, operand)
    if isinstance(expr, Binary):
        return Binary(expr.op, _fold(expr.left), _fold(expr.right))
    if isinstance(expr, Const) and expr.ty == "int":
        return Const(wrap32(expr.value), "int")
    if isinstance(expr, Const) and expr.ty == "float":
        return Const(to_f32(expr.value), "float")
    return expr


class _Lowerer:
    def __init__(self, program: Program):
        self.types = program.types()
        self.fresh = FreshNames(self.types)
        self.decls = list(program.declarations)
        self.out: list[Statement] = []
        self.temps = 0

    def temp(self, ty: str) -> str:
        name = self.fresh("_t")
        self.types[name] = ty
        self.decls.append(Declaration(name, ty))
        self.temps += 1
        return name

    def atom(self, expr, pred: str):
        if is_atom(expr):
            return expr
        node = self.shallow(expr, pred)
        name = self.temp(expr_type(node, self.types))
        self.out.append(Statement(pred, Assign(name, node)))
        return Var(name)

    def shallow(self, expr, pred: str):
        """expr with its operands reduced to atoms."""
        if isinstance(expr, Unary):
            return Unary(expr.op, self.atom(expr.operand, pred))
        if isinstance(expr, Binary):
            left = self.atom(expr.left, pred)
            right = self.atom(expr.right, pred)
            return Binary(expr.op, left, right)
        return expr

    def statement(self, stmt: Statement) -> None:
        start = len(self.out)
        inst = stmt.instruction
        if isinstance(inst, Assign):
            lowered = Assign(inst.target, self.shallow(_fold(inst.value), stmt.predicate), inst.line, inst.column)
        elif isinstance(inst, Print):
            lowered = Print(inst.fmt, self.atom(_fold(inst.value), stmt.predicate), inst.line, inst.column)
        else:
            lowered = inst
        self.out.append(Statement(stmt.predicate, lowered, None, stmt.line, stmt.column))
        if stmt.label:
            first = self.out[start]
            self.out[start] = Statement(first.predicate, first.instruction, stmt.label, first.line, first.column)


def lower(program: Program) -> Program:
    """Rewrite program so every statement is a single typed opcode.

    Structured if-blocks are desugared first. Lowering a lowered program
    returns an equal program.
    """
    if has_structured_control(program):
        program = desugar_if(program)
    lowerer = _Lowerer(program)
    for stmt in program.statements:
        lowerer.statement(stmt)
    if lowerer.temps:
        logger.debug("lowered %s: %d temporaries", program.name, lowerer.temps)
    return Program(program.name, lowerer.decls, lowerer.out, list(program.end_labels))


def opcode_spec(name: str) -> OpcodeSpec:
    try:
        return OPCODES[name]
    except KeyError:
        raise CompileError(f"unknown opcode {name!r}") from None

