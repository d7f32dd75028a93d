"""L_cfi frontend: parsing, printing, validation, if-desugaring, reset inference.

Programs are written as `declar* stmt*` where every statement is
`pred : inst` with pred a boolean constant or a bool variable. Lines may be
preceded by `$label` lines, goto takes a label and two predicate reset lists:

    int i
    bool c
    true : i = 0
    true : c = i < 10
    $loop
    c : i = i + 1
    c : c = i < 10
    c : goto(loop, [c], [true])

Statements are separated by newlines or `;`; `#` starts a line comment.
The structured extension `if (e) {..} else if (e) {..} else {..}` is accepted
anywhere a statement is and removed by desugar_if(). `else` must follow the
closing brace on the same line.
"""

import json
import logging
from pathlib import Path
from typing import Optional

from lark import Lark, Transformer, v_args
from lark.exceptions import UnexpectedCharacters, UnexpectedEOF, UnexpectedInput, UnexpectedToken, VisitError

from decorrelator.errors import LcfiSyntaxError, ProgramError
from decorrelator.models import (
    Assign, Binary, Const, Declaration, Diagnostic, Goto, IfBlock, Print, Program,
    Statement, Unary, Var,
)

logger = logging.getLogger(__name__)

LCFI_GRAMMAR = r"""
start: _SEP? (item (_SEP item)* _SEP?)?

?item: declaration
     | label
     | statement
     | if_block

declaration: type NAME ("=" literal)?
!type: "bool" | "int" | "float"
label: "$" NAME

statement: pred ":" instruction
?pred: "true"  -> pred_true
     | "false" -> pred_false
     | NAME    -> pred_var

?instruction: assign | print_inst | goto_inst
assign: NAME "=" expr
print_inst: "print" "(" ESCAPED_STRING "," expr ")"
goto_inst: "goto" "(" NAME ("," reset_list ("," reset_list)?)? ")"
reset_list: "[" (pred ("," pred)*)? "]"

if_block: "if" "(" expr ")" block elif_clause* else_clause?
elif_clause: "else" "if" "(" expr ")" block
else_clause: "else" block
block: "{" _SEP? (block_item (_SEP block_item)* _SEP?)? "}"
?block_item: instruction | if_block

?expr: or_expr
?or_expr: and_expr | or_expr "||" and_expr -> or_op
?and_expr: cmp_expr | and_expr "&&" cmp_expr -> and_op
?cmp_expr: sum
    | sum "<" sum  -> lt
    | sum "<=" sum -> le
    | sum ">" sum  -> gt
    | sum ">=" sum -> ge
    | sum "==" sum -> eq
    | sum "!=" sum -> ne
?sum: term | sum "+" term -> add | sum "-" term -> sub
?term: unary | term "*" unary -> mul | term "/" unary -> div | term "%" unary -> mod
?unary: atom | "-" unary -> neg | "!" unary -> not_op | "~" unary -> inv
?atom: literal | NAME -> var | "(" expr ")"
?literal: NUMBER -> number | "true" -> true_lit | "false" -> false_lit

NAME: /[A-Za-z_][A-Za-z0-9_]*/
NUMBER: /\d+(\.\d*)?/
COMMENT: /#[^\n]*/
_SEP.2: /(?:[ \t\f]*(?:#[^\n]*)?(?:\r?\n|;))+[ \t\f]*/

%import common.ESCAPED_STRING
%ignore /[ \t\f]+/
%ignore COMMENT
"""

_BINARY_ALIASES = {
    "or_op": "||", "and_op": "&&",
    "lt": "<", "le": "<=", "gt": ">", "ge": ">=", "eq": "==", "ne": "!=",
    "add": "+", "sub": "-", "mul": "*", "div": "/", "mod": "%",
}

_parser = Lark(LCFI_GRAMMAR, parser="lalr", propagate_positions=True, maybe_placeholders=False)


def _pos(meta) -> dict:
    if getattr(meta, "empty", True):
        return {"line": 0, "column": 0}
    return {"line": meta.line, "column": meta.column}


class _AstBuilder(Transformer):
    """Bottom-up conversion from the lark parse tree to the dataclass AST."""

    def __init__(self, filename: str):
        super().__init__()
        self.filename = filename

    def start(self, items):
        return list(items)

    # declarations and labels
    @v_args(meta=True)
    def declaration(self, meta, children):
        ty, name = children[0], str(children[1])
        initial = children[2] if len(children) > 2 else None
        return Declaration(name=name, ty=ty, initial=initial, **_pos(meta))

    def type(self, children):
        return str(children[0])

    @v_args(meta=True)
    def label(self, meta, children):
        return ("label", str(children[0]), _pos(meta))

    # statements
    @v_args(meta=True)
    def statement(self, meta, children):
        pred, inst = children
        return Statement(predicate=pred, instruction=inst, **_pos(meta))

    def pred_true(self, _):
        return "true"

    def pred_false(self, _):
        return "false"

    def pred_var(self, children):
        return str(children[0])

    @v_args(meta=True)
    def assign(self, meta, children):
        return Assign(target=str(children[0]), value=children[1], **_pos(meta))

    @v_args(meta=True)
    def print_inst(self, meta, children):
        fmt = json.loads(str(children[0]))
        return Print(fmt=fmt, value=children[1], **_pos(meta))

    @v_args(meta=True)
    def goto_inst(self, meta, children):
        target = str(children[0])
        lists = [tuple(c) for c in children[1:]]
        while len(lists) < 2:
            lists.append(())
        return Goto(target=target, reset_first=lists[0], reset_second=lists[1], **_pos(meta))

    def reset_list(self, children):
        return list(children)

    # structured if
    @v_args(meta=True)
    def if_block(self, meta, children):
        branches = [(children[0], children[1])]
        orelse = None
        for child in children[2:]:
            if child[0] == "elif":
                branches.append((child[1], child[2]))
            else:
                orelse = child[1]
        return IfBlock(branches=tuple(branches), orelse=orelse, **_pos(meta))

    def elif_clause(self, children):
        return ("elif", children[0], children[1])

    def else_clause(self, children):
        return ("else", children[0])

    def block(self, children):
        return tuple(children)

    # expressions
    def number(self, children):
        text = str(children[0])
        if "." in text:
            return Const(float(text), "float")
        return Const(int(text), "int")

    def true_lit(self, _):
        return Const(True, "bool")

    def false_lit(self, _):
        return Const(False, "bool")

    def var(self, children):
        return Var(str(children[0]))

    def neg(self, children):
        return Unary("-", children[0])

    def not_op(self, children):
        return Unary("!", children[0])

    def inv(self, children):
        return Unary("~", children[0])

    def __default__(self, data, children, meta):
        if data in _BINARY_ALIASES:
            return Binary(_BINARY_ALIASES[data], children[0], children[1])
        return super().__default__(data, children, meta)


def _syntax_error(exc: UnexpectedInput, filename: str) -> LcfiSyntaxError:
    line = getattr(exc, "line", 0) or 0
    column = getattr(exc, "column", 0) or 0
    if isinstance(exc, UnexpectedEOF) or (
        isinstance(exc, UnexpectedToken) and exc.token.type == "$END"
    ):
        message = "syntax error: unexpected end of input"
    elif isinstance(exc, UnexpectedCharacters):
        message = f"syntax error: unexpected character {exc.char!r}"
    elif isinstance(exc, UnexpectedToken):
        message = f"syntax error: unexpected {exc.token.type.lower()} {str(exc.token)!r}"
    else:
        message = "syntax error"
    return LcfiSyntaxError(message, max(line, 0), max(column, 0), filename)


def _assemble(items: list, name: str, filename: str) -> Program:
    """Attach labels to the following statement and split declarations off."""
    program = Program(name=name)
    pending: Optional[tuple] = None
    seen_statement = False
    for item in items:
        if isinstance(item, Declaration):
            if seen_statement or pending is not None:
                raise LcfiSyntaxError(
                    "syntax error: declarations must precede statements",
                    item.line, item.column, filename,
                )
            program.declarations.append(item)
        elif isinstance(item, tuple) and item[0] == "label":
            if pending is not None:
                pos = item[2]
                raise LcfiSyntaxError(
                    f"syntax error: label ${pending[1]} is followed by another label",
                    pos["line"], pos["column"], filename,
                )
            pending = item
        else:
            seen_statement = True
            if pending is not None:
                item = _with_label(item, pending[1])
                pending = None
            program.statements.append(item)
    if pending is not None:
        program.end_labels.append(pending[1])
    return program


def _with_label(item, label: str):
    if isinstance(item, Statement):
        return Statement(item.predicate, item.instruction, label, item.line, item.column)
    return IfBlock(item.branches, item.orelse, label, item.line, item.column)


def parse_program(source: str, name: str = "main", filename: str = "<input>", check: bool = True) -> Program:
    """Parse L_cfi text into a Program, preserving statement order.

    Raises LcfiSyntaxError on malformed text and, when check is set,
    ProgramError carrying every diagnostic validate() reports.
    """
    try:
        tree = _parser.parse(source)
    except UnexpectedInput as exc:
        raise _syntax_error(exc, filename) from None
    try:
        items = _AstBuilder(filename).transform(tree)
    except VisitError as exc:
        raise exc.orig_exc from None
    program = _assemble(items, name, filename)
    if check:
        diagnostics = validate(program, filename)
        if diagnostics:
            raise ProgramError(diagnostics)
    logger.debug("parsed %s: %d declarations, %d statements",
                 name, len(program.declarations), len(program.statements))
    return program


def load_program(path, check: bool = True) -> Program:
    """Parse a .lcfi file; the program is named after the file stem."""
    path = Path(path)
    source = path.read_text(encoding="utf-8")
    return parse_program(source, name=path.stem, filename=str(path), check=check)


# ── Printing ──────────────────────────────────────────────────────────────────

def format_expr(expr) -> str:
    if isinstance(expr, Const):
        if expr.ty == "bool":
            return "true" if expr.value else "false"
        if expr.ty == "float":
            text = repr(float(expr.value))
            if "e" in text or "n" in text:
                text = f"{expr.value:.12f}".rstrip("0")
            return text
        return str(expr.value)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Unary):
        return f"{expr.op}{format_expr(expr.operand)}"
    return f"({format_expr(expr.left)} {expr.op} {format_expr(expr.right)})"


def format_instruction(inst) -> str:
    if isinstance(inst, Assign):
        return f"{inst.target} = {format_expr(inst.value)}"
    if isinstance(inst, Print):
        return f"print({json.dumps(inst.fmt)}, {format_expr(inst.value)})"
    first = ", ".join(inst.reset_first)
    second = ", ".join(inst.reset_second)
    return f"goto({inst.target}, [{first}], [{second}])"


def _format_items(items, indent: str, lines: list) -> None:
    for item in items:
        if isinstance(item, IfBlock):
            _format_if(item, indent, lines)
        else:
            lines.append(indent + format_instruction(item))


def _format_if(block: IfBlock, indent: str, lines: list) -> None:
    for k, (cond, body) in enumerate(block.branches):
        head = "if" if k == 0 else "} else if"
        lines.append(f"{indent}{head} ({format_expr(cond)}) {{")
        _format_items(body, indent + "    ", lines)
    if block.orelse is not None:
        lines.append(indent + "} else {")
        _format_items(block.orelse, indent + "    ", lines)
    lines.append(indent + "}")


def format_program(program: Program) -> str:
    """Render a Program back to L_cfi text that parses to an equal Program."""
    lines = []
    for decl in program.declarations:
        init = f" = {format_expr(decl.initial)}" if decl.initial is not None else ""
        lines.append(f"{decl.ty} {decl.name}{init}")
    for item in program.statements:
        if item.label:
            lines.append(f"${item.label}")
        if isinstance(item, IfBlock):
            _format_if(item, "", lines)
        else:
            lines.append(f"{item.predicate} : {format_instruction(item.instruction)}")
    for label in program.end_labels:
        lines.append(f"${label}")
    return "\n".join(lines) + "\n"


# ── Validation ────────────────────────────────────────────────────────────────

class _Checker:
    def __init__(self, program: Program, filename: str):
        self.filename = filename
        self.diagnostics: list[Diagnostic] = []
        self.types: dict[str, str] = {}
        self.labels: set[str] = set()
        self.program = program

    def report(self, kind: str, message: str, node=None):
        line = getattr(node, "line", 0) if node is not None else 0
        column = getattr(node, "column", 0) if node is not None else 0
        self.diagnostics.append(Diagnostic(kind, message, line, column, self.filename))

    def run(self) -> list[Diagnostic]:
        for decl in self.program.declarations:
            if decl.name in self.types:
                self.report("DuplicateDeclaration", f"duplicate declaration of '{decl.name}'", decl)
                continue
            self.types[decl.name] = decl.ty
            if decl.initial is not None and decl.initial.ty != decl.ty:
                self.report("TypeMismatch",
                            f"'{decl.name}' is {decl.ty} but initialised with {decl.initial.ty}", decl)
        for label in [s.label for s in self.program.statements if s.label] + list(self.program.end_labels):
            if label in self.labels:
                self.report("DuplicateLabel", f"duplicate label '${label}'")
            self.labels.add(label)
        for item in self.program.statements:
            if isinstance(item, IfBlock):
                self.check_if(item)
            else:
                self.check_predicate(item.predicate, item)
                self.check_instruction(item.instruction, item)
        return self.diagnostics

    def check_predicate(self, pred: str, node):
        if pred in ("true", "false"):
            return
        ty = self.types.get(pred)
        if ty is None:
            self.report("UndeclaredVariable", f"use of undeclared variable '{pred}'", node)
        elif ty != "bool":
            self.report("NonBooleanPredicate", f"predicate '{pred}' is {ty}, expected bool", node)

    def check_if(self, block: IfBlock):
        for cond, body in block.branches:
            ty = self.type_of(cond, block)
            if ty is not None and ty != "bool":
                self.report("TypeMismatch", f"if condition is {ty}, expected bool", block)
            self.check_body(body, block)
        if block.orelse is not None:
            self.check_body(block.orelse, block)

    def check_body(self, body, parent):
        for inst in body:
            if isinstance(inst, IfBlock):
                self.check_if(inst)
            else:
                self.check_instruction(inst, inst if inst.line else parent)

    def check_instruction(self, inst, node):
        if isinstance(inst, Assign):
            target_ty = self.types.get(inst.target)
            if target_ty is None:
                self.report("UndeclaredVariable", f"use of undeclared variable '{inst.target}'", node)
            value_ty = self.type_of(inst.value, node)
            if target_ty and value_ty and target_ty != value_ty:
                self.report("TypeMismatch",
                            f"cannot assign {value_ty} to '{inst.target}' of type {target_ty}", node)
        elif isinstance(inst, Print):
            self.type_of(inst.value, node)
        elif isinstance(inst, Goto):
            if inst.target not in self.labels:
                self.report("UnknownLabel", f"goto to unknown label '${inst.target}'", node)
            for pred in tuple(inst.reset_first) + tuple(inst.reset_second):
                self.check_predicate(pred, node)

    def type_of(self, expr, node) -> Optional[str]:
        if isinstance(expr, Const):
            return expr.ty
        if isinstance(expr, Var):
            ty = self.types.get(expr.name)
            if ty is None:
                self.report("UndeclaredVariable", f"use of undeclared variable '{expr.name}'", node)
            return ty
        if isinstance(expr, Unary):
            ty = self.type_of(expr.operand, node)
            if ty is None:
                return None
            allowed = {"-": ("int", "float"), "!": ("bool",), "~": ("int", "bool")}[expr.op]
            if ty not in allowed:
                self.report("TypeMismatch", f"operator '{expr.op}' is not defined on {ty}", node)
                return None
            return ty
        left = self.type_of(expr.left, node)
        right = self.type_of(expr.right, node)
        if left is None or right is None:
            return None
        if left != right:
            self.report("TypeMismatch", f"operands of '{expr.op}' have types {left} and {right}", node)
            return None
        return result_type(expr.op, left, lambda msg: self.report("TypeMismatch", msg, node))


def result_type(op: str, operand_ty: str, on_error=None) -> Optional[str]:
    """Result type of a binary operator applied to two operands of operand_ty."""
    def fail(message):
        if on_error is not None:
            on_error(message)
        return None

    if op in ("&&", "||"):
        return "bool" if operand_ty == "bool" else fail(f"operator '{op}' needs bool operands")
    if op in ("==", "!="):
        return "bool"
    if op in ("<", "<=", ">", ">="):
        return "bool" if operand_ty != "bool" else fail(f"operator '{op}' is not defined on bool")
    if operand_ty == "bool":
        return fail(f"operator '{op}' is not defined on bool")
    if op == "%" and operand_ty == "float":
        return fail("operator '%' is not defined on float")
    return operand_ty


def validate(program: Program, filename: str = "<input>") -> list[Diagnostic]:
    """Return every well-formedness problem of program; empty when it is valid."""
    return _Checker(program, filename).run()


def require_valid(program: Program, filename: str = "<input>") -> Program:
    diagnostics = validate(program, filename)
    if diagnostics:
        raise ProgramError(diagnostics)
    return program


# ── Desugaring ────────────────────────────────────────────────────────────────

class FreshNames:
    """Hands out identifiers that collide with nothing already declared."""

    def __init__(self, taken):
        self.taken = set(taken)
        self.counters: dict[str, int] = {}

    def __call__(self, prefix: str) -> str:
        while True:
            n = self.counters.get(prefix, 0)
            self.counters[prefix] = n + 1
            name = f"{prefix}{n}"
            if name not in self.taken:
                self.taken.add(name)
                return name


def _conjoin(guard: str, expr):
    return expr if guard == "true" else Binary("&&", Var(guard), expr)


def _desugar_block(block: IfBlock, guard: str, fresh: FreshNames, decls: list) -> list:
    out: list[Statement] = []
    rest = guard
    last = len(block.branches) - 1
    for k, (cond, body) in enumerate(block.branches):
        taken = fresh("_if")
        decls.append(Declaration(taken, "bool"))
        out.append(Statement("true", Assign(taken, _conjoin(rest, cond))))
        if k < last or block.orelse is not None:
            remaining = fresh("_else")
            decls.append(Declaration(remaining, "bool"))
            out.append(Statement("true", Assign(remaining, _conjoin(rest, Unary("!", Var(taken))))))
        else:
            remaining = None
        out.extend(_desugar_body(body, taken, fresh, decls))
        rest = remaining
    if block.orelse is not None:
        out.extend(_desugar_body(block.orelse, rest, fresh, decls))
    if out and block.label:
        first = out[0]
        out[0] = Statement(first.predicate, first.instruction, block.label, block.line, block.column)
    return out


def _desugar_body(body, guard: str, fresh: FreshNames, decls: list) -> list:
    out = []
    for inst in body:
        if isinstance(inst, IfBlock):
            out.extend(_desugar_block(inst, guard, fresh, decls))
        else:
            out.append(Statement(guard, inst, None, inst.line, inst.column))
    return out


def has_structured_control(program: Program) -> bool:
    return any(isinstance(item, IfBlock) for item in program.statements)


def desugar_if(program: Program) -> Program:
    """Rewrite if/else chains into pure predicated form.

    Each branch guard is materialised into a fresh bool before the branch
    body, as the conjunction of the enclosing guard and the negations of the
    earlier conditions; the body runs under that guard.
    """
    if not has_structured_control(program):
        return Program(program.name, list(program.declarations),
                       list(program.statements), list(program.end_labels))
    fresh = FreshNames(d.name for d in program.declarations)
    decls = list(program.declarations)
    statements = []
    for item in program.statements:
        if isinstance(item, IfBlock):
            lowered = _desugar_block(item, "true", fresh, decls)
            if not lowered and item.label:
                # an empty if keeps its label alive on a no-op
                lowered = [Statement("false", Goto(item.label), item.label)]
            statements.extend(lowered)
        else:
            statements.append(item)
    result = Program(program.name, decls, statements, list(program.end_labels))
    diagnostics = validate(result)
    if diagnostics:
        raise ProgramError(diagnostics)
    return result


def infer_resets(program: Program) -> Program:
    """Add to every backward goto the predicates of its loop body.

    The loop body is every statement from the target label through the goto
    itself; their predicates get their last-line field reset so the body can
    run again on the next iteration.
    """
    if has_structured_control(program):
        program = desugar_if(program)
    positions = {s.label: i for i, s in enumerate(program.statements) if s.label}
    statements = list(program.statements)
    changed = 0
    for j, stmt in enumerate(program.statements):
        inst = stmt.instruction
        if not isinstance(inst, Goto) or inst.target not in positions:
            continue
        i = positions[inst.target]
        if i > j:
            continue
        existing = set(inst.reset_first) | set(inst.reset_second)
        extra = []
        for body_stmt in program.statements[i:j + 1]:
            pred = body_stmt.predicate
            if pred not in existing and pred != "false":
                existing.add(pred)
                extra.append(pred)
        if extra:
            changed += 1
            goto = Goto(inst.target, tuple(inst.reset_first) + tuple(extra), inst.reset_second,
                        inst.line, inst.column)
            statements[j] = Statement(stmt.predicate, goto, stmt.label, stmt.line, stmt.column)
    if changed:
        logger.debug("inferred resets for %d goto(s) in %s", changed, program.name)
    return Program(program.name, list(program.declarations), statements, list(program.end_labels))


def prune_resets(program: Program) -> Program:
    """Drop reset entries for predicates that guard nothing in the loop body.

    Once merged with other programs, a backward jump of a foreign program
    sweeps this program's finished statements again; only predicates that
    the body re-evaluates are guaranteed to be guarding them by then.
    """
    positions = {s.label: i for i, s in enumerate(program.statements) if s.label}
    statements = list(program.statements)
    for j, stmt in enumerate(program.statements):
        inst = stmt.instruction
        if not isinstance(inst, Goto) or inst.target not in positions or positions[inst.target] > j:
            continue
        used = {s.predicate for s in program.statements[positions[inst.target]:j + 1]}
        first = tuple(p for p in inst.reset_first if p in used)
        second = tuple(p for p in inst.reset_second if p in used)
        if (first, second) != (tuple(inst.reset_first), tuple(inst.reset_second)):
            goto = Goto(inst.target, first, second, inst.line, inst.column)
            statements[j] = Statement(stmt.predicate, goto, stmt.label, stmt.line, stmt.column)
    return Program(program.name, list(program.declarations), statements, list(program.end_labels))


def forward_gotos(program: Program) -> list[Statement]:
    """Gotos whose target lies after them (end labels included)."""
    positions = {s.label: i for i, s in enumerate(program.statements) if s.label}
    found = []
    for j, stmt in enumerate(program.statements):
        inst = stmt.instruction
        if isinstance(inst, Goto) and positions.get(inst.target, len(program.statements)) > j:
            found.append(stmt)
    return found
