"""Obfuscating compiler: uniformize, lay out, interleave, obfuscate IDs.

The pipeline for a set of programs:

    validate -> desugar_if -> infer/prune resets -> lower
             -> uniformize (junk padding) -> layout -> opaque labels
             -> interleave -> mine a fresh obfuscated ID per reference

Every pass draws from its own child of np.random.SeedSequence(config.seed),
so a compile is a pure function of the programs and the config.
"""

import json
import logging
from collections import Counter, deque
from typing import Optional

import numpy as np
from lark import Lark, Transformer
from lark.exceptions import UnexpectedInput, VisitError

from decorrelator.config import RunConfig
from decorrelator.core.frontend import (
    FreshNames, desugar_if, forward_gotos, has_structured_control, infer_resets, prune_resets,
    require_valid,
)
from decorrelator.core.layout import const_label, layout, predicate_label, var_label
from decorrelator.core.lowering import OPCODES, lower, opcode_of, opcode_spec, operands_of
from decorrelator.errors import CompileError, IdSpaceExhausted, KeyMaterialError, ListingSyntaxError
from decorrelator.models import (
    JUNK_ORIGIN, Assign, Binary, CompileResult, Const, Declaration, Goto, KeyMaterial, ObfStatement,
    ObfuscatedProgram, OpcodeHistogram, Print, Program, ProvenanceMap, Statement, Unary, Var,
)

logger = logging.getLogger(__name__)

_JUNK_DIVISORS = {"int": (3, 5, 7), "float": (2.0,)}
_JUNK_POOL_SIZE = 3


# ── Histograms ────────────────────────────────────────────────────────────────

def opcode_histogram(program: Program) -> OpcodeHistogram:
    """Opcode counts of a lowered program."""
    types = program.types()
    counts = Counter(opcode_of(stmt, types) for stmt in program.statements)
    return OpcodeHistogram(counts=dict(counts), total=sum(counts.values()))


def program_alphabet(programs: list[Program]) -> set[str]:
    alphabet = set()
    for program in programs:
        alphabet.update(opcode_histogram(program).counts)
    return alphabet


# ── Uniformization ────────────────────────────────────────────────────────────

class _JunkFactory:
    """Builds junk statements for one program out of dedicated junk variables.

    Arithmetic junk runs under a junk predicate initialised true and writes
    only junk variables; print and goto junk run under one initialised false.
    """

    def __init__(self, program: Program, rng: np.random.Generator, formats: list[str]):
        labels = [s.label for s in program.statements if s.label] + list(program.end_labels)
        self.fresh = FreshNames([d.name for d in program.declarations] + labels)
        self.rng = rng
        self.formats = formats
        self.decls: list[Declaration] = []
        self.pools = {"int": [], "float": [], "bool": []}
        self._on: Optional[str] = None
        self._off: Optional[str] = None

    def _declare(self, prefix: str, ty: str, initial=None) -> str:
        name = self.fresh(prefix)
        self.decls.append(Declaration(name, ty, initial))
        return name

    @property
    def on(self) -> str:
        if self._on is None:
            self._on = self._declare("_jpt", "bool", Const(True, "bool"))
        return self._on

    @property
    def off(self) -> str:
        if self._off is None:
            self._off = self._declare("_jpf", "bool", Const(False, "bool"))
        return self._off

    def var(self, ty: str) -> Var:
        pool = self.pools[ty]
        if len(pool) < _JUNK_POOL_SIZE:
            prefix = {"int": "_ji", "float": "_jx", "bool": "_jb"}[ty]
            pool.append(self._declare(prefix, ty))
            return Var(pool[-1])
        return Var(pool[int(self.rng.integers(len(pool)))])

    def statement(self, opcode: str) -> Statement:
        spec = opcode_spec(opcode)
        if spec.kind == "goto":
            label = self.fresh("_jl")
            return Statement(self.off, Goto(label), label)
        if spec.kind == "print":
            fmt = self.formats[int(self.rng.integers(len(self.formats)))] if self.formats else ""
            return Statement(self.off, Print(fmt, self.var(spec.operand_ty)))
        target = self.var(spec.result_ty).name
        if spec.arity == 1:
            operand = self.var(spec.operand_ty)
            value = operand if spec.op is None else Unary(spec.op, operand)
        elif spec.op in ("/", "%"):
            choices = _JUNK_DIVISORS[spec.operand_ty]
            divisor = choices[int(self.rng.integers(len(choices)))]
            value = Binary(spec.op, self.var(spec.operand_ty), Const(divisor, spec.operand_ty))
        else:
            value = Binary(spec.op, self.var(spec.operand_ty), self.var(spec.operand_ty))
        return Statement(self.on, Assign(target, value))


def _print_formats(programs: list[Program]) -> list[str]:
    formats = []
    for program in programs:
        for stmt in program.statements:
            if isinstance(stmt.instruction, Print) and stmt.instruction.fmt not in formats:
                formats.append(stmt.instruction.fmt)
    return formats


def _pad(program: Program, alphabet: list[str], target: int, rng, formats) -> tuple[Program, list[bool]]:
    counts = opcode_histogram(program).counts
    factory = _JunkFactory(program, rng, formats)
    junk = []
    for opcode in alphabet:
        for _ in range(target - counts.get(opcode, 0)):
            junk.append(factory.statement(opcode))
    junk = [junk[int(i)] for i in rng.permutation(len(junk))] if junk else []
    size = len(program.statements) + len(junk)
    mask = np.zeros(size, dtype=bool)
    if size:
        mask[rng.choice(size, size=len(junk), replace=False)] = True
    real_iter, junk_iter = iter(program.statements), iter(junk)
    statements = [next(junk_iter) if is_junk else next(real_iter) for is_junk in mask]
    padded = Program(program.name, list(program.declarations) + factory.decls, statements,
                     list(program.end_labels))
    return padded, [bool(m) for m in mask]


def uniformize_with_masks(programs: list[Program], alphabet=None, junk_seed=0, junk_programs: int = 0,
                          junk_ratio: Optional[float] = None) -> tuple[list[Program], list[list[bool]]]:
    """uniformize() that also reports which statements of each output are junk."""
    used = program_alphabet(programs)
    alphabet = sorted(used if alphabet is None else set(alphabet))
    if not alphabet:
        raise CompileError("opcode alphabet is empty")
    outside = used - set(alphabet)
    if outside:
        raise CompileError(f"opcodes outside the alphabet: {', '.join(sorted(outside))}")
    rng = np.random.default_rng(junk_seed)
    formats = _print_formats(programs)
    taken = {p.name for p in programs}
    pool = list(programs)
    fresh = FreshNames(taken)
    for _ in range(junk_programs):
        pool.append(Program(fresh("junk")))
    target = max(max(opcode_histogram(p).counts.values(), default=0) for p in programs)
    target = max(target, 1)
    results, masks = [], []
    for program in pool:
        padded, mask = _pad(program, alphabet, target, rng, formats)
        results.append(require_valid(padded))
        masks.append(mask)
    before = sum(len(p.statements) for p in programs)
    after = sum(len(p.statements) for p in results)
    if junk_ratio is not None and after > (1 + junk_ratio) * before:
        raise CompileError(
            f"uniformization needs {after - before} junk statements for {before} real ones, "
            f"over the junk ratio of {junk_ratio:g}"
        )
    logger.info("uniformized %d programs over %d opcodes: %d -> %d statements",
                len(pool), len(alphabet), before, after)
    return results, masks


def uniformize(programs: list[Program], alphabet=None, junk_seed=0, junk_programs: int = 0,
               junk_ratio: Optional[float] = None) -> list[Program]:
    """Pad lowered programs with junk so every opcode histogram is uniform.

    Every output program holds the same number M of each opcode in the
    alphabet, M being the largest single-opcode count of any input, so
    all outputs also have the same length. Real statements keep their
    relative order. junk_programs appends that many programs made of junk
    only; their names start with `junk`.
    """
    results, _ = uniformize_with_masks(programs, alphabet, junk_seed, junk_programs, junk_ratio)
    return results


# ── Interleaving ──────────────────────────────────────────────────────────────

def weighted_pick(remaining: list[int], rng: np.random.Generator) -> int:
    """Index i drawn with probability remaining[i] / sum(remaining)."""
    total = sum(remaining)
    if total <= 0:
        raise CompileError("nothing left to pick from")
    r = int(rng.integers(total))
    cumulative = 0
    for index, size in enumerate(remaining):
        cumulative += size
        if r < cumulative:
            return index
    raise AssertionError("unreachable")


def interleave(programs: list[Program], rng_seed=0) -> tuple[list[Statement], ProvenanceMap]:
    """Randomly merge programs, keeping each program's statement order.

    Each step picks a program with probability proportional to its number
    of statements not yet taken and takes the front one.
    """
    if not programs:
        raise CompileError("nothing to interleave")
    rng = np.random.default_rng(rng_seed)
    queues = [deque(p.statements) for p in programs]
    remaining = [len(q) for q in queues]
    merged, origins = [], []
    while any(remaining):
        index = weighted_pick(remaining, rng)
        merged.append(queues[index].popleft())
        origins.append(programs[index].name)
        remaining[index] -= 1
    return merged, ProvenanceMap(origins=origins, padding=[False] * len(merged))


# ── ID obfuscation ────────────────────────────────────────────────────────────

def draw_secret_key(data_size: int, alpha: int, beta: int, rng: np.random.Generator) -> int:
    """sk uniform over [max(alpha*t, t+1), beta*t]."""
    low = max(alpha * data_size, data_size + 1)
    high = beta * data_size
    if low > high:
        raise KeyMaterialError(f"empty key range [{low}, {high}] for a {data_size}-byte data section")
    return int(rng.integers(low, high + 1))


def class_size(sk: int, clear_id: int, id_bound: int) -> int:
    """Number of r in [sk, id_bound) with r % sk == clear_id.

    r == clear_id itself is left out: it would put the clear ID in the listing.
    """
    if clear_id >= id_bound:
        return 0
    return max(0, (id_bound - 1 - clear_id) // sk)


def mine_obfuscated_id(sk: int, clear_id: int, rng: np.random.Generator, used: set, id_bound: int) -> int:
    """Draw a fresh obfuscated ID congruent to clear_id modulo sk.

    The ID is clear_id + k*sk with k >= 1, uniform over the members of the
    class below id_bound that are not in used, and is added to used.
    """
    if not 0 <= clear_id < sk:
        raise KeyMaterialError(f"clear ID {clear_id} is outside [0, {sk})")
    count = class_size(sk, clear_id, id_bound)
    if count <= 0:
        raise IdSpaceExhausted(f"no ID below {id_bound} is congruent to {clear_id}")
    for _ in range(32):
        r = clear_id + (1 + int(rng.integers(count))) * sk
        if r not in used:
            used.add(r)
            return r
    free = [clear_id + k * sk for k in range(1, count + 1) if clear_id + k * sk not in used]
    if not free:
        raise IdSpaceExhausted(f"all {count} IDs of the class of {clear_id} are issued")
    r = free[int(rng.integers(len(free)))]
    used.add(r)
    return r


# ── Compile ───────────────────────────────────────────────────────────────────

def prepare(program: Program, infer: bool = True) -> Program:
    """Validate, desugar, settle reset lists and lower one source program."""
    require_valid(program)
    if has_structured_control(program):
        program = desugar_if(program)
    if infer:
        program = infer_resets(program)
    return lower(prune_resets(program))


def _opaque_labels(programs: list[Program], rng) -> list[Program]:
    """Rename every label to a random `L<k>`, distinct across programs."""
    taken: set[str] = set()

    def fresh() -> str:
        while True:
            name = f"L{int(rng.integers(10 ** 6))}"
            if name not in taken:
                taken.add(name)
                return name

    renamed = []
    for program in programs:
        labels = [s.label for s in program.statements if s.label] + list(program.end_labels)
        mapping = {label: fresh() for label in labels}
        statements = []
        for stmt in program.statements:
            inst = stmt.instruction
            if isinstance(inst, Goto):
                inst = Goto(mapping[inst.target], inst.reset_first, inst.reset_second, inst.line, inst.column)
            label = mapping[stmt.label] if stmt.label else None
            statements.append(Statement(stmt.predicate, inst, label, stmt.line, stmt.column))
        renamed.append(Program(program.name, program.declarations, statements,
                               [mapping[label] for label in program.end_labels]))
    return renamed


def _place_end_labels(merged: list[Statement], origins: list[str], programs: list[Program]):
    """Attach each end label to the merged position after its program's last statement."""
    position_label = {i: s.label for i, s in enumerate(merged) if s.label}
    alias = {}
    end_label = None
    for program in programs:
        if not program.end_labels:
            continue
        owned = [i for i, origin in enumerate(origins) if origin == program.name]
        position = owned[-1] + 1 if owned else 0
        for label in program.end_labels:
            if position in position_label:
                alias[label] = position_label[position]
                continue
            position_label[position] = label
            if position == len(merged):
                end_label = label
            else:
                stmt = merged[position]
                merged[position] = Statement(stmt.predicate, stmt.instruction, label, stmt.line, stmt.column)
    return merged, alias, end_label


def _reference_labels(owner: str, stmt: Statement) -> tuple[str, list[str], list[list[str]]]:
    pred = predicate_label(owner, stmt.predicate)
    operands = []
    for atom in operands_of(stmt):
        operands.append(const_label(atom) if isinstance(atom, Const) else var_label(owner, atom.name))
    resets = [[], []]
    inst = stmt.instruction
    if isinstance(inst, Goto):
        resets = [[predicate_label(owner, p) for p in inst.reset_first],
                  [predicate_label(owner, p) for p in inst.reset_second]]
    return pred, operands, resets


def compile_programs(programs: list[Program], config: Optional[RunConfig] = None) -> CompileResult:
    """Compile source programs into one obfuscated program plus trusted material."""
    config = config or RunConfig()
    config.validate()
    if not programs:
        raise CompileError("at least one program is required")
    names = [p.name for p in programs]
    if len(set(names)) != len(names):
        raise CompileError(f"program names must be unique, got {names}")
    seeds = np.random.SeedSequence(config.seed).spawn(6)

    prepared = [prepare(p, config.infer_resets) for p in programs]
    if len(prepared) > 1:
        for program in prepared:
            if forward_gotos(program):
                raise CompileError(
                    f"program '{program.name}' jumps forward; only backward gotos can be merged "
                    "with other programs"
                )
    if config.uniformize and config.junk_ratio > 0:
        junk_seed = config.junk_seed if config.junk_seed is not None else seeds[0]
        padded, masks = uniformize_with_masks(prepared, None, junk_seed, config.junk_programs,
                                              config.junk_ratio)
    else:
        padded, masks = prepared, [[False] * len(p.statements) for p in prepared]
    junk_names = {p.name for p in padded[len(prepared):]}

    flat = layout(padded, seed=seeds[1], max_size=config.max_data_size)
    labelled = _opaque_labels(padded, np.random.default_rng(seeds[3]))
    merged, provenance = interleave(labelled, rng_seed=seeds[2])
    owners = list(provenance.origins)
    merged, alias, end_label = _place_end_labels(merged, owners, labelled)

    cursor = Counter()
    mask_of = {p.name: m for p, m in zip(padded, masks)}
    padding = []
    for owner in owners:
        padding.append(mask_of[owner][cursor[owner]] or owner in junk_names)
        cursor[owner] += 1

    references = [_reference_labels(owner, stmt) for owner, stmt in zip(owners, merged)]
    reference_counts = Counter()
    for pred, operands, resets in references:
        for label in [pred, *operands, *resets[0], *resets[1]]:
            reference_counts[flat.entries[label].clear_id] += 1

    t = flat.total_size
    key_rng = np.random.default_rng(seeds[4])
    sk = draw_secret_key(t, config.alpha, config.beta, key_rng)
    perm_seed = config.perm_seed if config.perm_seed is not None else int(key_rng.integers(0, 2 ** 63))
    for clear_id, count in reference_counts.items():
        if class_size(sk, clear_id, config.id_bound) < count:
            raise CompileError(
                f"id_bound {config.id_bound} leaves fewer than {count} IDs per clear ID; raise it "
                f"above {(count + 1) * config.beta * t}"
            )
    if config.shuffle_period is None:
        shuffle_period = len(programs)
    else:
        shuffle_period = config.shuffle_period or None
    if shuffle_period is None:
        logger.warning("page shuffling is disabled; physical addresses will correlate accesses")
    key = KeyMaterial(sk=sk, alpha=config.alpha, beta=config.beta, id_bound=config.id_bound,
                      perm_seed=perm_seed, counter_bits=config.counter_bits, page_bits=config.page_bits,
                      shuffle_period=shuffle_period, data_size=t,
                      statement_shuffle=config.statement_shuffle)

    id_rng = np.random.default_rng(seeds[5])
    used: set[int] = set()
    obf_to_clear = {}

    def mine(label: str) -> int:
        clear_id = flat.entries[label].clear_id
        r = mine_obfuscated_id(sk, clear_id, id_rng, used, config.id_bound)
        obf_to_clear[r] = clear_id
        return r

    types = {p.name: p.types() for p in padded}
    statements = []
    for owner, stmt, (pred, operands, resets) in zip(owners, merged, references):
        inst = stmt.instruction
        opcode = opcode_of(stmt, types[owner])
        obf = ObfStatement(
            predicate=mine(pred),
            opcode=opcode,
            operands=tuple(mine(label) for label in operands),
            text=inst.fmt if isinstance(inst, Print) else None,
            label=stmt.label,
            target=alias.get(inst.target, inst.target) if isinstance(inst, Goto) else None,
            resets=(tuple(mine(l) for l in resets[0]), tuple(mine(l) for l in resets[1])),
        )
        statements.append(obf)

    provenance = ProvenanceMap(
        origins=[JUNK_ORIGIN if owner in junk_names else owner for owner in owners],
        padding=padding,
        obf_to_clear=obf_to_clear,
    )
    logger.info("compiled %d programs into %d statements (%d junk), data section of %d bytes",
                len(programs), len(statements), sum(padding), t)
    program = ObfuscatedProgram(statements=statements, page_bits=config.page_bits, end_label=end_label)
    return CompileResult(program=program, key=key, layout=flat, provenance=provenance, sources=padded)


# ── Listing format ────────────────────────────────────────────────────────────

LISTING_GRAMMAR = r"""
start: _NL? header (_NL line)* _NL?

header: ".page_bits" INT

?line: LABEL ":" stmt? -> labelled
     | stmt

?stmt: INT ":" OPCODE operand* -> data_stmt
     | INT ":" "goto" LABEL id_list id_list -> goto_stmt

?operand: INT | ESCAPED_STRING
id_list: "[" (INT ("," INT)*)? "]"

LABEL: /L\d+/
OPCODE: /[a-z]+\.[bif]/
_NL: /(\r?\n[ \t]*)+/

%import common.INT
%import common.ESCAPED_STRING
%ignore /[ \t]+/
"""

_listing_parser = Lark(LISTING_GRAMMAR, parser="lalr", maybe_placeholders=False)


class _ListingBuilder(Transformer):
    def start(self, children):
        header, *lines = children
        program = ObfuscatedProgram(page_bits=header)
        for line in lines:
            if isinstance(line, tuple):
                label, stmt = line
                if stmt is None:
                    program.end_label = label
                    continue
                stmt = ObfStatement(stmt.predicate, stmt.opcode, stmt.operands, stmt.text, label,
                                    stmt.target, stmt.resets)
            else:
                stmt = line
            program.statements.append(stmt)
        return program

    def header(self, children):
        return int(children[0])

    def labelled(self, children):
        return (str(children[0]), children[1] if len(children) > 1 else None)

    def data_stmt(self, children):
        pred, opcode, *operands = children
        opcode = str(opcode)
        if opcode not in OPCODES:
            raise ListingSyntaxError(f"unknown opcode {opcode!r}", opcode.line, opcode.column)
        text = None
        ids = []
        for token in operands:
            if token.type == "ESCAPED_STRING":
                text = json.loads(str(token))
            else:
                ids.append(int(token))
        return ObfStatement(int(pred), opcode, tuple(ids), text)

    def goto_stmt(self, children):
        pred, target, first, second = children
        return ObfStatement(int(pred), "goto", (), None, None, str(target), (first, second))

    def id_list(self, children):
        return tuple(int(c) for c in children)


def format_listing(program: ObfuscatedProgram) -> str:
    """Render the untrusted instruction section, one statement per line."""
    lines = [f".page_bits {program.page_bits}"]
    for stmt in program.statements:
        prefix = f"{stmt.label}: " if stmt.label else ""
        if stmt.opcode == "goto":
            first = ", ".join(str(r) for r in stmt.resets[0])
            second = ", ".join(str(r) for r in stmt.resets[1])
            body = f"goto {stmt.target} [{first}] [{second}]"
        elif stmt.text is not None:
            body = " ".join([stmt.opcode, json.dumps(stmt.text), *map(str, stmt.operands)])
        else:
            body = " ".join([stmt.opcode, *map(str, stmt.operands)])
        lines.append(f"{prefix}{stmt.predicate} : {body}")
    if program.end_label:
        lines.append(f"{program.end_label}:")
    return "\n".join(lines) + "\n"


def parse_listing(text: str, filename: str = "<listing>") -> ObfuscatedProgram:
    try:
        tree = _listing_parser.parse(text)
    except UnexpectedInput as exc:
        raise ListingSyntaxError("malformed listing", getattr(exc, "line", 0) or 0,
                                 getattr(exc, "column", 0) or 0, filename) from None
    try:
        return _ListingBuilder().transform(tree)
    except VisitError as exc:
        raise exc.orig_exc from None


def listing_ids(program: ObfuscatedProgram) -> list[int]:
    """Every obfuscated ID in program, predicates included, in listing order."""
    ids = []
    for stmt in program.statements:
        ids.append(stmt.predicate)
        ids.extend(stmt.operands)
        ids.extend(stmt.resets[0])
        ids.extend(stmt.resets[1])
    return ids
