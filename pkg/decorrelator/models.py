"""Dataclass models shared by every stage of the pipeline.

Source-level AST nodes come first, then the compiler's artifacts, then the
runtime/trace records and the analysis reports. These are plain data
containers; the behaviour lives in decorrelator/core/.
"""

from dataclasses import dataclass, field
from typing import Optional, Union

INT_WIDTH = 4
FLOAT_WIDTH = 4
BOOL_WIDTH = 1
LAST_LINE_WIDTH = 4

TYPE_WIDTHS = {"int": INT_WIDTH, "float": FLOAT_WIDTH, "bool": BOOL_WIDTH}

JUNK_ORIGIN = "JUNK"


# ── Source AST ────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Const:
    """A literal. ty is one of 'int', 'bool', 'float'."""
    value: Union[int, bool, float]
    ty: str


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # '-', '!', '~'
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Const, Var, Unary, Binary]


@dataclass(frozen=True)
class Assign:
    target: str
    value: Expr
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Print:
    fmt: str
    value: Expr
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Goto:
    """Jump to a line label, resetting the last-line field of two predicate lists."""
    target: str
    reset_first: tuple = ()
    reset_second: tuple = ()
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


Instruction = Union[Assign, Print, Goto]


@dataclass(frozen=True)
class Statement:
    """`pred : inst`, optionally preceded by a `$label` line.

    predicate is 'true', 'false' or the name of a bool variable.
    """
    predicate: str
    instruction: Instruction
    label: Optional[str] = None
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class IfBlock:
    """Structured `if (c) {..} else if (d) {..} else {..}` before desugaring.

    branches is a tuple of (condition, body) pairs; bodies hold bare
    instructions and nested IfBlocks.
    """
    branches: tuple
    orelse: Optional[tuple] = None
    label: Optional[str] = None
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Declaration:
    name: str
    ty: str  # bool, int, float
    initial: Optional[Const] = None
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass
class Program:
    """declarations plus an ordered list of statements (P_i).

    end_labels name the position just past the last statement, so a goto to
    one of them halts the program.
    """
    name: str
    declarations: list = field(default_factory=list)  # list[Declaration]
    statements: list = field(default_factory=list)  # list[Statement | IfBlock]
    end_labels: list = field(default_factory=list)  # list[str]

    def types(self) -> dict[str, str]:
        return {d.name: d.ty for d in self.declarations}


@dataclass(frozen=True)
class Diagnostic:
    kind: str  # UndeclaredVariable, UnknownLabel, DuplicateDeclaration, ...
    message: str
    line: int = 0
    column: int = 0
    filename: str = "<input>"

    def format(self) -> str:
        return f"{self.filename}:{self.line}:{self.column}: {self.message}"


# ── Flat memory ───────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class LayoutEntry:
    """One data item of the flat data section: bytes [clear_id, clear_id + width)."""
    clear_id: int
    width: int
    kind: str  # var, const, predicate-state
    ty: str  # int, bool, float (predicate-state slots are int)
    initial: Union[int, bool, float] = 0


@dataclass
class FlatLayout:
    entries: dict = field(default_factory=dict)  # label -> LayoutEntry
    total_size: int = 0


@dataclass
class PredicateState:
    value_slot: int
    last_line_index: int = -1


# ── Compiler artifacts ────────────────────────────────────────────────────────

@dataclass(frozen=True)
class OpcodeSpec:
    """Typed three-address opcode, e.g. add.i or print.f.

    kind is assign, print or goto; op is the source operator (None for mov).
    """
    name: str
    kind: str
    op: Optional[str] = None
    operand_ty: Optional[str] = None
    result_ty: Optional[str] = None
    arity: int = 0


@dataclass
class OpcodeHistogram:
    counts: dict = field(default_factory=dict)  # opcode -> count
    total: int = 0


@dataclass
class KeyMaterial:
    """Trusted-side secrets and ID/page geometry.

    shuffle_period None means the data section is never shuffled.
    statement_shuffle re-permutes the pages of every statement visit after
    it finishes; it has no effect while shuffling is off.
    """
    sk: int
    alpha: int
    beta: int
    id_bound: int
    perm_seed: int
    counter_bits: int
    page_bits: int
    shuffle_period: Optional[int]
    data_size: int
    statement_shuffle: bool = False


@dataclass(frozen=True)
class ObfStatement:
    """One line of the instruction section.

    operands are obfuscated IDs (destination first for data opcodes). text is
    the print format literal; target and resets are set for goto only.
    """
    predicate: int
    opcode: str
    operands: tuple = ()
    text: Optional[str] = None
    label: Optional[str] = None
    target: Optional[str] = None
    resets: tuple = ((), ())


@dataclass
class ObfuscatedProgram:
    statements: list = field(default_factory=list)  # list[ObfStatement]
    page_bits: int = 8
    id_format: str = "decimal"
    end_label: Optional[str] = None  # label of the position past the last statement


@dataclass
class ProvenanceMap:
    """Ground truth kept on the trusted side only.

    origins[i] is the source program of merged statement i (or JUNK for
    junk programs); padding[i] marks junk inserted into a real program.
    """
    origins: list = field(default_factory=list)
    padding: list = field(default_factory=list)
    obf_to_clear: dict = field(default_factory=dict)


@dataclass
class CompileResult:
    program: ObfuscatedProgram
    key: KeyMaterial
    layout: FlatLayout
    provenance: ProvenanceMap
    sources: list = field(default_factory=list)  # uniformized, lowered Programs


# ── Runtime ───────────────────────────────────────────────────────────────────

@dataclass
class AccessStats:
    accesses_since_shuffle: int = 0
    threshold: Optional[int] = None
    shuffles: int = 0


@dataclass(frozen=True)
class OutputRecord:
    """A print result: format literal, value, and the statement index that printed it."""
    fmt: str
    value: Union[int, bool, float]
    line: int = 0

    def render(self) -> str:
        value = str(self.value).lower() if isinstance(self.value, bool) else self.value
        return f'"{self.fmt}", {value}'


@dataclass
class EvaluatorState:
    ip: int = 0
    outputs: list = field(default_factory=list)  # list[OutputRecord]
    step_count: int = 0


@dataclass(frozen=True)
class TraceAccess:
    """One resolve as seen from outside the trusted boundary."""
    obf_id: int
    physical: tuple
    written: bool = False
    shuffled: tuple = ()  # pages rewritten just before this access


@dataclass(frozen=True)
class TraceStep:
    step: int
    line: int
    opcode: str
    executed: bool
    accesses: tuple = ()


@dataclass
class ExecutionTrace:
    steps: list = field(default_factory=list)  # list[TraceStep]
    page_bits: int = 8


@dataclass
class RunResult:
    outputs: list
    trace: ExecutionTrace
    state: EvaluatorState


# ── Analysis ──────────────────────────────────────────────────────────────────

@dataclass
class ProgramSizes:
    sizes: list

    def __post_init__(self):
        self.sizes = [int(s) for s in self.sizes]
        if not self.sizes:
            raise ValueError("at least one program size is required")
        if any(s < 1 for s in self.sizes):
            raise ValueError("program sizes must be positive")

    @property
    def n(self) -> int:
        return len(self.sizes)


@dataclass
class DistributionProfile:
    """Per-program opcode probabilities, D_i(S=s)."""
    programs: dict = field(default_factory=dict)  # name -> {opcode: probability}


@dataclass(frozen=True)
class GuessOutcome:
    win: float
    advantage: float
    target: int


@dataclass
class AttackReport:
    accuracy: float
    baseline: float
    advantage: float
    correlator: str
    trials: int
    modulus_guess: Optional[int] = None
    linked_fraction: float = 0.0
    vacuous: bool = False


@dataclass
class BenchReport:
    solo_seconds: dict = field(default_factory=dict)
    solo_sum: float = 0.0
    merged_seconds: float = 0.0
    overhead_percent: float = 0.0
    repetitions: int = 0
    outputs_match: bool = True
    uniformized: bool = False
