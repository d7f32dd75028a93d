"""Bundled L_cfi programs: the two-program demo pair and the benchmark pair.

The demo pair is small enough to read in a listing: P1 adds 0..9 and prints
45, P2 adds the powers 2^1..2^10 and prints 2046. The benchmark pair are
loop programs whose size is set by a parameter.
"""

from decorrelator.core.frontend import parse_program
from decorrelator.models import Program

SUM_TO_TEN = """\
int i
int sum
bool c
true : i = 0
true : sum = 0
true : c = i < 10
$loop
c : sum = sum + i
c : i = i + 1
c : c = i < 10
c : goto(loop, [c], [true])
true : print("sum", sum)
"""

POWERS_OF_TWO = """\
int k
int p
int total
bool c
true : k = 0
true : p = 1
true : total = 0
true : c = k < 10
$loop
c : p = p * 2
c : total = total + p
c : k = k + 1
c : c = k < 10
c : goto(loop, [c], [true])
true : print("powers", total)
"""

DEMO_SOURCES = {"p1": SUM_TO_TEN, "p2": POWERS_OF_TWO}
DEMO_OUTPUTS = {"p1": 45, "p2": 2046}

AVERAGE_SIZE = 4000
DOT_SIZE = 10000


def average_source(n: int = AVERAGE_SIZE) -> str:
    """Integer average of x_i = (7i + 3) mod 100 for i < n."""
    return f"""\
int i
int x
int sum
bool c
true : i = 0
true : sum = 0
true : c = i < {n}
$loop
c : x = (i * 7 + 3) % 100
c : sum = sum + x
c : i = i + 1
c : c = i < {n}
c : goto(loop, [c], [true])
true : print("mean", sum / {n})
"""


def dot_source(n: int = DOT_SIZE) -> str:
    """Dot product of a_j = (3j + 1) mod 50 and b_j = (5j + 2) mod 50 for j < n."""
    return f"""\
int j
int a
int b
int dot
bool c
true : j = 0
true : dot = 0
true : c = j < {n}
$loop
c : a = (j * 3 + 1) % 50
c : b = (j * 5 + 2) % 50
c : dot = dot + a * b
c : j = j + 1
c : c = j < {n}
c : goto(loop, [c], [true])
true : print("inner product", dot)
"""


def expected_average(n: int = AVERAGE_SIZE) -> int:
    return sum((i * 7 + 3) % 100 for i in range(n)) // n


def expected_dot(n: int = DOT_SIZE) -> int:
    return sum(((j * 3 + 1) % 50) * ((j * 5 + 2) % 50) for j in range(n))


def demo_pair() -> list[Program]:
    return [parse_program(source, name=name) for name, source in DEMO_SOURCES.items()]


def bench_pair(average_n: int = AVERAGE_SIZE, dot_n: int = DOT_SIZE) -> list[Program]:
    return [
        parse_program(average_source(average_n), name="average"),
        parse_program(dot_source(dot_n), name="dot"),
    ]
