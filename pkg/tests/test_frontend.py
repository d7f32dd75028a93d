import itertools

import pytest
from hypothesis import given, settings, strategies as st

from decorrelator.core.frontend import (
    desugar_if, format_program, infer_resets, parse_program, prune_resets, validate,
)
from decorrelator.core.programs import SUM_TO_TEN
from decorrelator.core.reference import interpret, rendered
from decorrelator.errors import LcfiSyntaxError, ProgramError
from decorrelator.models import Binary, Const, Goto, IfBlock, Unary, Var


def test_minimal_program_parses():
    program = parse_program('bool c\nc : print("x", 1)')
    assert len(program.declarations) == 1
    assert len(program.statements) == 1
    assert program.statements[0].predicate == "c"


def test_loop_program_keeps_goto_reset_lists():
    program = parse_program(SUM_TO_TEN, name="p1")
    gotos = [s for s in program.statements if isinstance(s.instruction, Goto)]
    assert len(gotos) == 1
    assert gotos[0].instruction.target == "loop"
    assert gotos[0].instruction.reset_first == ("c",)
    assert gotos[0].instruction.reset_second == ("true",)
    assert program.statements[3].label == "loop"


def test_statements_keep_source_order_and_positions():
    program = parse_program("int a\ntrue : a = 1\ntrue : a = 2\ntrue : a = 3")
    values = [s.instruction.value.value for s in program.statements]
    assert values == [1, 2, 3]
    assert [s.line for s in program.statements] == [2, 3, 4]


def test_truncated_input_is_syntax_error_at_end():
    with pytest.raises(LcfiSyntaxError) as excinfo:
        parse_program('bool c\nc : print(')
    assert "end of input" in str(excinfo.value)


def test_syntax_error_formats_file_line_column():
    with pytest.raises(LcfiSyntaxError) as excinfo:
        parse_program("int a\ntrue : a = = 1", filename="bad.lcfi")
    assert str(excinfo.value).startswith("bad.lcfi:2:")


def test_declaration_after_statement_is_rejected():
    with pytest.raises(LcfiSyntaxError):
        parse_program("int a\ntrue : a = 1\nint b")


def test_semicolons_and_comments_separate_statements():
    program = parse_program("int a; true : a = 1  # set\n# full line\ntrue : a = a + 1")
    assert len(program.statements) == 2


def test_operator_precedence():
    program = parse_program("int a\nbool b\ntrue : a = 1 + 2 * 3\ntrue : b = a < 3 || a == 7 && true")
    assert program.statements[0].instruction.value == Binary("+", Const(1, "int"), Binary("*", Const(2, "int"), Const(3, "int")))
    value = program.statements[1].instruction.value
    assert value.op == "||"
    assert value.right.op == "&&"


def test_float_and_initializer():
    program = parse_program("float f = 1.5\ntrue : f = f * 2.0")
    assert program.declarations[0].initial == Const(1.5, "float")
    assert program.types() == {"f": "float"}


def test_trailing_label_becomes_end_label():
    program = parse_program("bool c\ntrue : c = true\nc : goto(done)\n$done")
    assert program.end_labels == ["done"]
    assert validate(program) == []


def test_validate_accepts_loop_program():
    assert validate(parse_program(SUM_TO_TEN, check=False)) == []


def test_validate_unknown_label():
    program = parse_program("true : goto(nowhere)", check=False)
    assert [d.kind for d in validate(program)] == ["UnknownLabel"]


def test_validate_undeclared_variable():
    program = parse_program("int a\ntrue : a = x_9 + 1", check=False)
    assert [d.kind for d in validate(program)] == ["UndeclaredVariable"]


def test_validate_duplicate_declaration_and_type_mismatch():
    program = parse_program("int a\nint a\nbool b\ntrue : b = 1", check=False)
    kinds = [d.kind for d in validate(program)]
    assert "DuplicateDeclaration" in kinds
    assert "TypeMismatch" in kinds


def test_validate_non_boolean_predicate():
    program = parse_program("int a\na : a = 1", check=False)
    assert [d.kind for d in validate(program)] == ["NonBooleanPredicate"]


def test_float_modulo_is_rejected():
    program = parse_program("float f\ntrue : f = f % 2.0", check=False)
    assert [d.kind for d in validate(program)] == ["TypeMismatch"]


def test_parse_with_check_raises_program_error():
    with pytest.raises(ProgramError) as excinfo:
        parse_program("true : goto(nowhere)", filename="p.lcfi")
    assert excinfo.value.diagnostics[0].kind == "UnknownLabel"
    assert str(excinfo.value).startswith("p.lcfi:1:")


def test_print_then_parse_round_trip():
    source = """\
int i
float f = 0.5
bool c
true : i = -3
true : f = f * 2.0
true : c = !(i < 0) || i % 2 == 1
$top
c : print("i is", ~i)
c : goto(top, [c], [])
"""
    program = parse_program(source)
    again = parse_program(format_program(program))
    assert again.declarations == program.declarations
    assert again.statements == program.statements


def test_structured_if_round_trips_through_printer():
    source = "bool c\nint x\nif (c) {\n    x = 1\n} else {\n    x = 2\n}\n"
    program = parse_program(source)
    assert isinstance(program.statements[0], IfBlock)
    assert parse_program(format_program(program)).statements == program.statements


def test_desugar_without_if_is_identity():
    program = parse_program(SUM_TO_TEN)
    desugared = desugar_if(program)
    assert desugared.statements == program.statements
    assert desugared.declarations == program.declarations


def test_desugar_if_else_chain_materializes_guards():
    source = """\
bool c
bool d
int x
if (c) {
    x = 1
    x = x + 1
} else if (d) {
    x = 3
} else {
    x = 4
}
"""
    program = desugar_if(parse_program(source))
    assert not any(isinstance(s, IfBlock) for s in program.statements)
    assert validate(program) == []
    guards = [s.predicate for s in program.statements if s.instruction.target == "x"]
    assert guards[0] == guards[1]
    assert len(set(guards)) == 3
    temps = {d.name for d in program.declarations} - {"c", "d", "x"}
    assert all(program.types()[name] == "bool" for name in temps)


def test_nested_if_conjoins_guards():
    program = desugar_if(parse_program("bool a\nbool b\nint x\nif (a) {\n  if (b) {\n    x = 1\n  }\n}\n"))
    body = [s for s in program.statements if s.instruction.target == "x"][0]
    guard = [s for s in program.statements if s.instruction.target == body.predicate][0]
    assert guard.instruction.value == Binary("&&", Var(program.statements[0].instruction.target), Var("b"))


STRUCTURED = """\
bool a
bool b
bool c
bool d
int x
if (a) {
    x = 1
    if (b) {
        x = x + 10
    } else if (c) {
        x = x + 20
    }
} else if (d) {
    x = 3
} else {
    x = 4
}
true : print("x", x)
"""

PREDICATED = """\
bool a
bool b
bool c
bool d
bool g1
bool g2
bool g3
bool g4
bool g5
int x
true : g1 = a
true : g2 = a && b
true : g3 = a && !b && c
true : g4 = !a && d
true : g5 = !a && !d
g1 : x = 1
g2 : x = x + 10
g3 : x = x + 20
g4 : x = 3
g5 : x = 4
true : print("x", x)
"""


def test_desugar_preserves_semantics_over_all_conditions():
    structured = parse_program(STRUCTURED)
    desugared = desugar_if(structured)
    handwritten = parse_program(PREDICATED)
    for values in itertools.product([False, True], repeat=4):
        overrides = dict(zip("abcd", values))
        expected = rendered(interpret(handwritten, overrides=overrides))
        assert rendered(interpret(desugared, overrides=overrides)) == expected
        assert rendered(interpret(structured, overrides=overrides)) == expected


def test_infer_resets_adds_loop_body_predicates():
    program = parse_program("int i\nbool c\ntrue : c = true\n$top\nc : i = i + 1\nc : c = i < 3\nc : goto(top)")
    goto = infer_resets(program).statements[-1].instruction
    assert goto.reset_first == ("c",)
    assert interpret(infer_resets(program), fuel=1000) == []


def test_inferred_loop_matches_explicit_resets():
    explicit = parse_program(SUM_TO_TEN)
    implicit_source = SUM_TO_TEN.replace("goto(loop, [c], [true])", "goto(loop)")
    implicit = infer_resets(parse_program(implicit_source))
    assert rendered(interpret(implicit)) == rendered(interpret(explicit)) == ['"sum", 45']


def test_prune_resets_drops_predicates_outside_the_body():
    goto = prune_resets(parse_program(SUM_TO_TEN)).statements[-2].instruction
    assert goto.reset_first == ("c",)
    assert goto.reset_second == ()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(min_value=-1000, max_value=1000), min_size=1, max_size=6))
def test_printed_constants_survive_round_trip(values):
    body = "\n".join(f"true : a = {v}" for v in values)
    program = parse_program("int a\n" + body)
    assert parse_program(format_program(program)).statements == program.statements
    expected = Unary("-", Const(abs(values[0]), "int")) if values[0] < 0 else Const(values[0], "int")
    assert program.statements[0].instruction.value == expected
