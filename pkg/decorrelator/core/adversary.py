"""Adversary lab: exact security formulas with their oracles, plus a trace correlation attack.

Probabilities are exact Fractions where the formula is closed-form;
Monte-Carlo estimators return floats and take an explicit seed.
"""

import itertools
import json
import logging
import math
import re
from collections import Counter, defaultdict
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from decorrelator.core.compiler import listing_ids
from decorrelator.core.evaluator import ACCESS_FIELDS, TRACE_FIELDS
from decorrelator.models import (
    JUNK_ORIGIN, AttackReport, DistributionProfile, ExecutionTrace, FlatLayout, GuessOutcome, KeyMaterial,
    ObfuscatedProgram, OpcodeHistogram, ProgramSizes, ProvenanceMap,
)

logger = logging.getLogger(__name__)

INSECURE_ADVANTAGE = 0.1
CORRELATORS = ("physical", "residue", "both")


def _sizes(sizes) -> list[int]:
    return list(sizes.sizes) if isinstance(sizes, ProgramSizes) else ProgramSizes(list(sizes)).sizes


# ── Pair probability ──────────────────────────────────────────────────────────

def baseline_pair_prob(sizes) -> Fraction:
    """Chance two distinct random statements of the merge share a program.

    (sum |P_k|^2 - sum |P_k|) / ((sum |P_k|)^2 - sum |P_k|)
    """
    sizes = _sizes(sizes)
    total = sum(sizes)
    if total < 2:
        raise ValueError("at least two statements are needed to draw a pair")
    return Fraction(sum(s * s for s in sizes) - total, total * total - total)


def equal_size_pair_prob(n: int, length: int) -> Fraction:
    """(l - 1) / (n l - 1): the baseline for n programs of l statements each."""
    return Fraction(length - 1, n * length - 1)


def exhaustive_pair_prob(sizes) -> Fraction:
    labels = [i for i, s in enumerate(_sizes(sizes)) for _ in range(s)]
    pairs = list(itertools.combinations(range(len(labels)), 2))
    if not pairs:
        raise ValueError("at least two statements are needed to draw a pair")
    same = sum(1 for a, b in pairs if labels[a] == labels[b])
    return Fraction(same, len(pairs))


def monte_carlo_pair_prob(sizes, trials: int, seed=0) -> float:
    """Sample pairs of distinct positions of a labelled merge."""
    sizes = _sizes(sizes)
    if trials < 1:
        raise ValueError("trials must be positive")
    total = sum(sizes)
    if total < 2:
        raise ValueError("at least two statements are needed to draw a pair")
    if len(sizes) == 1:
        return 1.0
    labels = np.repeat(np.arange(len(sizes)), sizes)
    rng = np.random.default_rng(seed)
    first = rng.integers(total, size=trials)
    second = rng.integers(total - 1, size=trials)
    second = second + (second >= first)
    return float(np.mean(labels[first] == labels[second]))


# ── Reconstruction ────────────────────────────────────────────────────────────

def reconstruct_prob(sizes: Sequence[int], target_index: int) -> Fraction:
    """(S - |P_t|)! / S!, evaluated as one over a falling factorial.

    sizes may contain zeros here; an empty target is reconstructed with
    probability one.
    """
    sizes = [int(s) for s in sizes]
    if any(s < 0 for s in sizes):
        raise ValueError("program sizes must not be negative")
    if not 0 <= target_index < len(sizes):
        raise ValueError(f"target index {target_index} out of range")
    total = sum(sizes)
    denominator = 1
    for k in range(sizes[target_index]):
        denominator *= total - k
    return Fraction(1, denominator)


def reconstruct_log10(sizes: Sequence[int], target_index: int) -> float:
    """log10 of reconstruct_prob, for merges too large to print as a fraction."""
    sizes = [int(s) for s in sizes]
    total = sum(sizes)
    return -sum(math.log10(total - k) for k in range(sizes[target_index]))


def exhaustive_reconstruct_prob(sizes: Sequence[int], target_index: int) -> Fraction:
    """Fraction of all orderings whose prefix is the target program, in order."""
    sizes = [int(s) for s in sizes]
    labels = [(i, k) for i, s in enumerate(sizes) for k in range(s)]
    wanted = tuple((target_index, k) for k in range(sizes[target_index]))
    hits = total = 0
    for perm in itertools.permutations(labels):
        total += 1
        if perm[:len(wanted)] == wanted:
            hits += 1
    return Fraction(hits, total)


def equal_size_bound(n: int, length: int) -> Fraction:
    """(1 / ((n - 1) l))^l, the bound on reconstruct_prob for n programs of length l."""
    if n < 2:
        raise ValueError("the bound needs at least two programs")
    return Fraction(1, ((n - 1) * length) ** length)


# ── Educated guess ────────────────────────────────────────────────────────────

def distribution_profile(histograms: dict) -> DistributionProfile:
    """Normalise per-program opcode counts (or OpcodeHistograms) to probabilities."""
    programs = {}
    for name, hist in histograms.items():
        counts = hist.counts if isinstance(hist, OpcodeHistogram) else dict(hist)
        total = sum(counts.values())
        if total <= 0:
            raise ValueError(f"program '{name}' has no opcodes")
        programs[name] = {op: Fraction(c, total) for op, c in counts.items()}
    return DistributionProfile(programs=programs)


def listing_histograms(program: ObfuscatedProgram, origins: Sequence[str]) -> dict[str, OpcodeHistogram]:
    """Opcode counts of the merged listing split by statement origin."""
    counts: dict[str, Counter] = {}
    for stmt, origin in zip(program.statements, origins):
        counts.setdefault(origin, Counter())[stmt.opcode] += 1
    return {name: OpcodeHistogram(counts=dict(c), total=sum(c.values())) for name, c in counts.items()}


def _weights(sizes, profile: DistributionProfile, opcode: str) -> list:
    sizes = _sizes(sizes)
    names = list(profile.programs)
    if len(names) != len(sizes):
        raise ValueError("profile and sizes describe different numbers of programs")
    return [Fraction(size) * Fraction(profile.programs[name].get(opcode, 0))
            for size, name in zip(sizes, names)]


def educated_guess_win(sizes, profile: DistributionProfile, opcode: str) -> GuessOutcome:
    """Guess the program maximising |P_i| D_i(s) for a statement with opcode s."""
    weights = _weights(sizes, profile, opcode)
    total = sum(weights)
    if total == 0:
        raise ValueError(f"opcode {opcode!r} is emitted by no program")
    target = max(range(len(weights)), key=lambda i: weights[i])
    win = weights[target] / total
    return GuessOutcome(win=float(win), advantage=float(win - Fraction(1, len(weights))), target=target)


def monte_carlo_educated_guess(sizes, profile: DistributionProfile, opcode: str, trials: int, seed=0) -> float:
    """Win rate of the educated guess on sampled statements that show opcode."""
    sizes = _sizes(sizes)
    outcome = educated_guess_win(sizes, profile, opcode)
    rng = np.random.default_rng(seed)
    names = list(profile.programs)
    owners = rng.choice(len(sizes), size=trials, p=np.array(sizes, dtype=float) / sum(sizes))
    shown = np.zeros(trials, dtype=bool)
    for index, name in enumerate(names):
        chance = float(profile.programs[name].get(opcode, 0))
        mask = owners == index
        shown[mask] = rng.random(int(mask.sum())) < chance
    if not shown.any():
        raise ValueError("no sampled statement showed the opcode; raise trials")
    return float(np.mean(owners[shown] == outcome.target))


def advantage_lower_bound(n: int) -> Fraction:
    """(n - 1) / n^2."""
    return Fraction(n - 1, n * n)


def advantage_bound_applies(profile: DistributionProfile, opcode: str) -> bool:
    """The (n-1)/n^2 bound is only derived for opcodes a single program emits."""
    emitters = [name for name, probs in profile.programs.items() if probs.get(opcode, 0) > 0]
    return len(emitters) == 1


def pigeonhole_holds(origins: Sequence[str], n: int) -> bool:
    """Every choice of n + 1 merged positions contains two of one program."""
    for chosen in itertools.combinations(range(len(origins)), n + 1):
        if len({origins[i] for i in chosen}) == n + 1:
            return False
    return True


# ── Trace attack ──────────────────────────────────────────────────────────────

def guess_modulus(ids: Iterable[int], max_modulus: int = 1 << 14, chunk: int = 512) -> Optional[int]:
    """Brute-force the modulus under which the IDs crowd into the fewest low residues.

    Scores each candidate m by (largest residue + 1) / m and breaks ties by
    the share of distinct residues.
    """
    values = np.unique(np.asarray(list(ids), dtype=np.int64))
    if values.size < 2:
        return None
    best, best_score = None, None
    for start in range(2, max_modulus + 1, chunk):
        moduli = np.arange(start, min(start + chunk, max_modulus + 1), dtype=np.int64)
        residues = values[:, None] % moduli[None, :]
        spread = (residues.max(axis=0) + 1) / moduli
        for m, score in zip(moduli, spread):
            if best_score is not None and score > best_score[0]:
                continue
            distinct = np.unique(values % m).size / m
            key = (float(score), float(distinct))
            if best_score is None or key < best_score:
                best, best_score = int(m), key
    return best


class _Clusters:
    def __init__(self):
        self.parent = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def _link(clusters: _Clusters, touches: dict, written: set) -> None:
    for key in written:
        lines = touches[key]
        for other in lines[1:]:
            clusters.union(lines[0], other)


def _physical_links(trace: ExecutionTrace, clusters: _Clusters) -> None:
    page_size = 1 << trace.page_bits
    epoch = defaultdict(int)
    touches, written = defaultdict(list), set()
    for step in trace.steps:
        for access in step.accesses:
            for page in access.shuffled:
                epoch[page] += 1
            if not access.physical:
                continue
            address = access.physical[0]
            page = address // page_size
            key = (page, epoch[page], address)
            touches[key].append(step.line)
            if access.written:
                written.add(key)
    _link(clusters, touches, written)


def _residue_links(trace: ExecutionTrace, modulus: int, clusters: _Clusters) -> None:
    touches, written = defaultdict(list), set()
    for step in trace.steps:
        for access in step.accesses:
            key = access.obf_id % modulus
            touches[key].append(step.line)
            if access.written:
                written.add(key)
    _link(clusters, touches, written)


def trace_attack(trace: ExecutionTrace, program: ObfuscatedProgram, ground_truth: ProvenanceMap,
                 correlator: str = "physical", modulus: Optional[int] = None,
                 max_modulus: int = 1 << 14) -> AttackReport:
    """Link statements through shared data accesses and score pair guesses.

    Every visited statement guesses one partner: a random member of its
    cluster, or a random visited statement when it has no links. Accuracy
    is the expected fraction of partners from the same program, so with no
    links it equals the baseline pair probability of the visited lines.
    """
    if correlator not in CORRELATORS:
        raise ValueError(f"correlator must be one of {', '.join(CORRELATORS)}")
    visited = sorted({step.line for step in trace.steps})
    if len(visited) < 2:
        return AttackReport(accuracy=0.0, baseline=0.0, advantage=0.0, correlator=correlator,
                            trials=len(visited), vacuous=True)
    origins = {line: ground_truth.origins[line] for line in visited}
    clusters = _Clusters()
    guessed = None
    if correlator in ("physical", "both"):
        _physical_links(trace, clusters)
    if correlator in ("residue", "both"):
        guessed = modulus or guess_modulus(listing_ids(program), max_modulus)
        if guessed:
            _residue_links(trace, guessed, clusters)

    members = defaultdict(list)
    for line in visited:
        members[clusters.find(line)].append(line)
    group_sizes = Counter(origins.values())
    total = len(visited)
    score = Fraction(0)
    linked = 0
    for line in visited:
        partners = [other for other in members[clusters.find(line)] if other != line]
        if partners:
            linked += 1
            same = sum(1 for other in partners if origins[other] == origins[line])
            score += Fraction(same, len(partners))
        else:
            score += Fraction(group_sizes[origins[line]] - 1, total - 1)
    accuracy = float(score / total)
    baseline = float(baseline_pair_prob(list(group_sizes.values())))
    report = AttackReport(accuracy=accuracy, baseline=baseline, advantage=accuracy - baseline,
                          correlator=correlator, trials=total, modulus_guess=guessed,
                          linked_fraction=linked / total)
    logger.info("%s attack: accuracy %.3f vs baseline %.3f", correlator, accuracy, baseline)
    return report


def is_insecure(report: AttackReport) -> bool:
    return not report.vacuous and report.advantage > INSECURE_ADVANTAGE


def report_to_dict(report: AttackReport) -> dict:
    return {
        "accuracy": report.accuracy,
        "baseline": report.baseline,
        "advantage": report.advantage,
        "correlator": report.correlator,
        "trials": report.trials,
        "modulus_guess": report.modulus_guess,
        "linked_fraction": report.linked_fraction,
        "vacuous": report.vacuous,
        "insecure": is_insecure(report),
    }


# ── Trusted-boundary audit ────────────────────────────────────────────────────

def _word(text: str) -> re.Pattern:
    return re.compile(rf"(?<![A-Za-z0-9_.]){re.escape(text)}(?![A-Za-z0-9_])")


def audit_untrusted(listing_text: str, trace_lines: Sequence[str], key: KeyMaterial, flat: FlatLayout,
                    provenance: ProvenanceMap, program: ObfuscatedProgram) -> list[str]:
    """Scan everything an adversary sees for trusted-side material.

    Returns a list of findings; empty means the listing and trace are clean.
    """
    findings = []
    known_ids = set(listing_ids(program))
    # below sk an ID is its own residue, i.e. the clear ID
    exposed = sorted(r for r in known_ids if r < key.sk)
    if exposed:
        findings.append(f"{len(exposed)} listing ID(s) are below the key modulus and expose clear IDs")
    for number, line in enumerate(trace_lines):
        if not line.strip():
            continue
        data = json.loads(line)
        if number == 0 and set(data) == {"page_bits"}:
            continue
        extra = set(data) - set(TRACE_FIELDS)
        if extra:
            findings.append(f"trace line {number} has unexpected fields {sorted(extra)}")
        for access in data.get("accesses", []):
            extra = set(access) - set(ACCESS_FIELDS)
            if extra:
                findings.append(f"trace line {number} access has unexpected fields {sorted(extra)}")
            if access.get("id") not in known_ids:
                findings.append(f"trace line {number} carries an ID that is not in the listing")
            if isinstance(access.get("id"), int) and access["id"] < key.sk:
                findings.append(f"trace line {number} carries an ID below the key modulus")
    untrusted = listing_text + "\n" + "\n".join(trace_lines)
    names = {origin for origin in provenance.origins if origin != JUNK_ORIGIN}
    for name in sorted(names) + sorted(flat.entries):
        if _word(name).search(untrusted):
            findings.append(f"trusted label {name!r} appears in untrusted output")
    if _word(str(key.perm_seed)).search(untrusted):
        findings.append("the permutation seed appears in untrusted output")
    if re.search(r'"(sk|perm_seed|clear_id|origins|obf_to_clear)"', untrusted):
        findings.append("a trusted field name appears in untrusted output")
    return findings
