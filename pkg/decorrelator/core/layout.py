"""Flat data-section layout.

All programs share one byte-addressed data section. Entries are labelled:

    {prog}.{var}          declared variable
    {prog}.true           the program's own `true` predicate constant
    {prog}.false          the program's `false`, only when used as a predicate
    {prog}.last.{pred}    4-byte last-line slot of a predicate
    const.{ty}.{value}    literal constant, shared by every program

A predicate's last-line slot sits directly after its 1-byte value slot so a
single reference resolves both. Groups are placed in a seeded random order.
"""

import logging
from typing import Optional

import numpy as np

from decorrelator.errors import LayoutError
from decorrelator.models import (
    BOOL_WIDTH, LAST_LINE_WIDTH, TYPE_WIDTHS, Binary, Const, FlatLayout, Goto, LayoutEntry,
    PredicateState, Program, Unary, Var,
)

logger = logging.getLogger(__name__)

PREDICATE_WIDTH = BOOL_WIDTH + LAST_LINE_WIDTH


def var_label(program: str, name: str) -> str:
    return f"{program}.{name}"


def last_line_label(program: str, predicate: str) -> str:
    return f"{program}.last.{predicate}"


def const_label(const: Const) -> str:
    if const.ty == "bool":
        text = "true" if const.value else "false"
    else:
        text = repr(const.value)
    return f"const.{const.ty}.{text}"


def predicate_label(program: str, predicate: str) -> str:
    """Label of the value slot a predicate reference resolves from."""
    return var_label(program, predicate)


def _constants(expr, found: dict) -> None:
    if isinstance(expr, Const):
        found.setdefault(const_label(expr), expr)
    elif isinstance(expr, Var):
        return
    elif isinstance(expr, Unary):
        _constants(expr.operand, found)
    elif isinstance(expr, Binary):
        _constants(expr.left, found)
        _constants(expr.right, found)


def used_predicates(program: Program) -> list[str]:
    """Predicates referenced by statements or reset lists, in first-use order."""
    seen = {"true": None}
    for stmt in program.statements:
        seen.setdefault(stmt.predicate, None)
        inst = stmt.instruction
        if isinstance(inst, Goto):
            for pred in tuple(inst.reset_first) + tuple(inst.reset_second):
                seen.setdefault(pred, None)
    return list(seen)


def _groups(programs: list[Program]) -> list[list[tuple[str, LayoutEntry]]]:
    groups = []
    constants: dict[str, Const] = {}
    names = [p.name for p in programs]
    if len(set(names)) != len(names):
        raise LayoutError("program names must be unique")
    for program in programs:
        preds = set(used_predicates(program))
        for decl in program.declarations:
            initial = decl.initial.value if decl.initial is not None else 0
            entry = LayoutEntry(0, TYPE_WIDTHS[decl.ty], "var", decl.ty, initial)
            group = [(var_label(program.name, decl.name), entry)]
            if decl.name in preds:
                group.append((last_line_label(program.name, decl.name),
                              LayoutEntry(0, LAST_LINE_WIDTH, "predicate-state", "int", -1)))
            groups.append(group)
        for const_pred, value in (("true", True), ("false", False)):
            if const_pred in preds:
                groups.append([
                    (var_label(program.name, const_pred), LayoutEntry(0, BOOL_WIDTH, "const", "bool", value)),
                    (last_line_label(program.name, const_pred),
                     LayoutEntry(0, LAST_LINE_WIDTH, "predicate-state", "int", -1)),
                ])
        for stmt in program.statements:
            inst = stmt.instruction
            if hasattr(inst, "value"):
                _constants(inst.value, constants)
    for label, const in sorted(constants.items()):
        groups.append([(label, LayoutEntry(0, TYPE_WIDTHS[const.ty], "const", const.ty, const.value))])
    return groups


def layout(programs: list[Program], seed=0, max_size: Optional[int] = None) -> FlatLayout:
    """Place every data item of programs in one flat, gap-free data section."""
    groups = _groups(programs)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(groups)) if groups else []
    entries = {}
    offset = 0
    for index in order:
        for label, entry in groups[int(index)]:
            entries[label] = LayoutEntry(offset, entry.width, entry.kind, entry.ty, entry.initial)
            offset += entry.width
    if max_size is not None and offset > max_size:
        raise LayoutError(f"data section of {offset} bytes exceeds the address-space bound of {max_size}")
    logger.debug("laid out %d entries in %d bytes", len(entries), offset)
    return FlatLayout(entries=entries, total_size=offset)


def clear_id_of(flat: FlatLayout, label: str) -> int:
    try:
        return flat.entries[label].clear_id
    except KeyError:
        raise LayoutError(f"unknown layout label '{label}'") from None


def entry_of(flat: FlatLayout, label: str) -> LayoutEntry:
    try:
        return flat.entries[label]
    except KeyError:
        raise LayoutError(f"unknown layout label '{label}'") from None


def predicate_state(flat: FlatLayout, program: str, predicate: str) -> PredicateState:
    value = entry_of(flat, predicate_label(program, predicate))
    last = entry_of(flat, last_line_label(program, predicate))
    if last.clear_id != value.clear_id + BOOL_WIDTH:
        raise LayoutError(f"last-line slot of '{program}.{predicate}' is not adjacent to its value")
    return PredicateState(value_slot=value.clear_id, last_line_index=last.initial)


def check_layout(flat: FlatLayout) -> None:
    """Raise LayoutError unless entries tile [0, total_size) exactly."""
    cursor = 0
    for entry in sorted(flat.entries.values(), key=lambda e: e.clear_id):
        if entry.clear_id != cursor:
            raise LayoutError(f"gap or overlap at byte {cursor}")
        cursor += entry.width
    if cursor != flat.total_size:
        raise LayoutError(f"entries cover {cursor} bytes, total_size is {flat.total_size}")


def layout_to_dict(flat: FlatLayout) -> dict:
    return {
        "total_size": flat.total_size,
        "entries": {
            label: {"clear_id": e.clear_id, "width": e.width, "kind": e.kind, "ty": e.ty, "initial": e.initial}
            for label, e in sorted(flat.entries.items(), key=lambda item: item[1].clear_id)
        },
    }


def layout_from_dict(data: dict) -> FlatLayout:
    entries = {label: LayoutEntry(**fields) for label, fields in data["entries"].items()}
    return FlatLayout(entries=entries, total_size=int(data["total_size"]))
