import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decorrelator.config import RunConfig
from decorrelator.core.compiler import (
    class_size, compile_programs, draw_secret_key, format_listing, interleave, listing_ids, mine_obfuscated_id,
    opcode_histogram, parse_listing, prepare, uniformize, uniformize_with_masks, weighted_pick,
)
from decorrelator.core.frontend import parse_program
from decorrelator.core.tee import recover_clear_id
from decorrelator.errors import CompileError, IdSpaceExhausted, ListingSyntaxError
from decorrelator.models import JUNK_ORIGIN, Assign


def _lowered(source, name):
    return prepare(parse_program(source, name=name))


def _toy(name, count):
    decls = "int v\n"
    body = "\n".join(f"true : v = {k}" for k in range(count))
    return parse_program(decls + body, name=name)


# ── uniformize ────────────────────────────────────────────────────────────────

def test_uniformize_pads_histogram_to_max_count():
    program = _lowered("int a\nint b\ntrue : a = a + b\ntrue : b = a + b\ntrue : a = a * b", "p")
    (padded,) = uniformize([program], alphabet={"add.i", "mul.i", "div.i"})
    assert opcode_histogram(padded).counts == {"add.i": 2, "mul.i": 2, "div.i": 2}


def test_uniform_program_is_left_alone():
    program = _lowered("int a\nint b\ntrue : a = a + b\ntrue : b = a * b", "p")
    (padded,) = uniformize([program])
    assert padded.statements == program.statements


def test_uniformized_demo_pair_has_equal_uniform_histograms(demo_pair):
    programs = [prepare(p) for p in demo_pair]
    padded = uniformize(programs, junk_seed=4)
    histograms = [opcode_histogram(p).counts for p in padded]
    alphabet = set().union(*histograms)
    for counts in histograms:
        assert set(counts) == alphabet
        assert max(counts.values()) - min(counts.values()) == 0
    assert len({len(p.statements) for p in padded}) == 1


def test_uniformize_keeps_real_order_and_junk_writes_junk_only(demo_pair):
    program = prepare(demo_pair[1])
    real_targets = {d.name for d in program.declarations}
    results, masks = uniformize_with_masks([program, prepare(demo_pair[0])], junk_seed=1)
    padded, mask = results[0], masks[0]
    real = [s for s, junk in zip(padded.statements, mask) if not junk]
    assert real == program.statements
    for stmt, junk in zip(padded.statements, mask):
        if junk and isinstance(stmt.instruction, Assign):
            assert stmt.instruction.target not in real_targets
            assert stmt.predicate not in real_targets


def test_division_junk_appears_in_program_without_division():
    p1 = _lowered("int a\ntrue : a = a + 1", "p1")
    p2 = _lowered("int b\ntrue : b = b / 3", "p2")
    padded = uniformize([p1, p2])
    assert opcode_histogram(padded[0]).counts.get("div.i") == 1


def test_uniformize_errors():
    program = _lowered("int a\ntrue : a = a + 1", "p")
    with pytest.raises(CompileError):
        uniformize([program], alphabet=set())
    with pytest.raises(CompileError):
        uniformize([program], alphabet={"mul.i"})
    lopsided = [_lowered("int a\n" + "true : a = a + 1\n" * 6, "x"), _lowered("int b\ntrue : b = b * 2", "y")]
    with pytest.raises(CompileError):
        uniformize(lopsided, junk_ratio=0.5)


def test_junk_programs_are_marked_junk(demo_pair):
    result = compile_programs(demo_pair, RunConfig(seed=3, junk_programs=2, junk_ratio=50.0))
    assert JUNK_ORIGIN in result.provenance.origins
    counts = Counter(result.provenance.origins)
    assert counts["p1"] == counts["p2"] == counts[JUNK_ORIGIN] // 2


# ── interleave ────────────────────────────────────────────────────────────────

def _subsequence(merged, origins, name):
    return [s for s, origin in zip(merged, origins) if origin == name]


def test_interleave_small_pair_yields_only_ordered_merges():
    a, b = _toy("a", 2), _toy("b", 1)
    seen = set()
    for seed in range(400):
        merged, provenance = interleave([a, b], rng_seed=seed)
        assert _subsequence(merged, provenance.origins, "a") == a.statements
        seen.add(tuple(provenance.origins))
    assert seen == {("a", "a", "b"), ("a", "b", "a"), ("b", "a", "a")}


def _all_merges(sizes):
    labels = [f"p{i}" for i, n in enumerate(sizes) for _ in range(n)]
    return set(itertools.permutations(labels))


def test_interleave_reaches_every_ordered_merge():
    vectors = list(itertools.product(range(1, 4), repeat=2)) + list(itertools.product((1, 2), repeat=3))
    for sizes in vectors:
        programs = [_toy(f"p{i}", n) for i, n in enumerate(sizes)]
        expected = _all_merges(sizes)
        seen = set()
        seed = 0
        while seen != expected and seed < 20 * len(expected) + 200:
            merged, provenance = interleave(programs, rng_seed=seed)
            assert len(merged) == sum(sizes)
            for program in programs:
                assert _subsequence(merged, provenance.origins, program.name) == program.statements
            seen.add(tuple(provenance.origins))
            seed += 1
        assert seen == expected, sizes


def test_single_program_interleave_is_identity():
    program = _toy("solo", 4)
    merged, provenance = interleave([program], rng_seed=0)
    assert merged == program.statements
    assert provenance.origins == ["solo"] * 4


def test_weighted_pick_follows_remaining_sizes():
    rng = np.random.default_rng(0)
    picks = Counter(weighted_pick([3, 1], rng) for _ in range(100_000))
    assert abs(picks[0] / 100_000 - 0.75) < 0.02
    with pytest.raises(CompileError):
        weighted_pick([0, 0], rng)


# ── ID mining ─────────────────────────────────────────────────────────────────

def test_mined_id_is_congruent():
    rng = np.random.default_rng(1)
    used = set()
    r = mine_obfuscated_id(109, 24, rng, used, 10 ** 6)
    assert r % 109 == 24
    assert r in used
    assert 278083 % 109 == 24


def test_each_occurrence_gets_a_fresh_id():
    rng = np.random.default_rng(2)
    used = set()
    ids = [mine_obfuscated_id(38, 5, rng, used, 10 ** 6) for _ in range(20)]
    assert len(set(ids)) == 20
    assert all(r % 38 == 5 for r in ids)


def test_class_exhaustion():
    rng = np.random.default_rng(3)
    used = set()
    # the class of 5 below 100 under sk=38 is {5, 43, 81}; 5 itself is never issued
    assert class_size(38, 5, 100) == 2
    for _ in range(2):
        mine_obfuscated_id(38, 5, rng, used, 100)
    assert used == {43, 81}
    with pytest.raises(IdSpaceExhausted):
        mine_obfuscated_id(38, 5, rng, used, 100)


def test_mined_id_never_equals_the_clear_id():
    rng = np.random.default_rng(5)
    for clear_id in range(10):
        ids = {mine_obfuscated_id(11, clear_id, rng, set(), 22) for _ in range(20)}
        assert ids == {clear_id + 11}
    assert class_size(11, 3, 11) == 0
    with pytest.raises(IdSpaceExhausted):
        mine_obfuscated_id(11, 3, rng, set(), 11)


def test_mine_and_recover_round_trip_bulk():
    rng = np.random.default_rng(4)
    failures = 0
    for _ in range(10_000):
        t = int(rng.integers(1, 500))
        sk = draw_secret_key(t, 2, 4, rng)
        assert 2 * t <= sk <= 4 * t
        x = int(rng.integers(t))
        r = mine_obfuscated_id(sk, x, rng, set(), 10 ** 6)
        failures += recover_clear_id(sk, r) != x
    assert failures == 0


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=2, max_value=5000), st.data())
def test_recover_inverts_mine(sk, data):
    x = data.draw(st.integers(min_value=0, max_value=sk - 1))
    r = mine_obfuscated_id(sk, x, np.random.default_rng(sk), set(), 10 ** 7)
    assert recover_clear_id(sk, r) == x


# ── compile ───────────────────────────────────────────────────────────────────

def test_compile_rewrites_every_reference(demo_compiled):
    program, key = demo_compiled.program, demo_compiled.key
    ids = listing_ids(program)
    assert len(ids) == len(set(ids))
    assert all(key.sk <= r < key.id_bound for r in ids)
    for r in ids:
        assert recover_clear_id(key.sk, r, key.data_size) == demo_compiled.provenance.obf_to_clear[r]
    assert key.alpha * key.data_size <= key.sk <= key.beta * key.data_size
    assert key.sk > key.data_size


def test_listing_has_no_names_or_source_labels(demo_compiled):
    text = format_listing(demo_compiled.program)
    for word in ("p1", "p2", "loop", "sum ", "total", "true :"):
        assert word not in text
    labels = [s.label for s in demo_compiled.program.statements if s.label]
    assert labels and all(label.startswith("L") for label in labels)


def test_listing_text_parses_back(demo_compiled):
    text = format_listing(demo_compiled.program)
    assert parse_listing(text) == demo_compiled.program
    assert text.splitlines()[0] == ".page_bits 8"


def test_malformed_listing_is_rejected():
    with pytest.raises(ListingSyntaxError):
        parse_listing(".page_bits 8\n12 : add.i 4 5 ??\n")


def test_compile_is_deterministic(demo_pair):
    first = compile_programs(demo_pair, RunConfig(seed=21))
    second = compile_programs(demo_pair, RunConfig(seed=21))
    assert format_listing(first.program) == format_listing(second.program)
    assert first.key == second.key
    assert first.layout == second.layout


def test_different_seeds_differ(demo_pair):
    for seed in range(10):
        one = compile_programs(demo_pair, RunConfig(seed=seed))
        other = compile_programs(demo_pair, RunConfig(seed=seed + 100))
        assert format_listing(one.program) != format_listing(other.program)


def test_size_bound_holds(demo_pair):
    config = RunConfig(seed=5)
    result = compile_programs(demo_pair, config)
    real = sum(len(prepare(p).statements) for p in demo_pair)
    assert len(result.program.statements) <= (1 + config.junk_ratio) * real


def test_small_id_bound_is_rejected(demo_pair):
    with pytest.raises(CompileError):
        compile_programs(demo_pair, RunConfig(id_bound=50))


def test_forward_goto_cannot_be_merged():
    jumper = parse_program("bool c\ntrue : c = true\nc : goto(done)\n$done", name="jumper")
    other = parse_program("int a\ntrue : a = 1", name="other")
    with pytest.raises(CompileError):
        compile_programs([jumper, other])
    assert compile_programs([jumper]).program.end_label is not None


def test_duplicate_names_are_rejected():
    program = parse_program("int a\ntrue : a = 1", name="twin")
    with pytest.raises(CompileError):
        compile_programs([program, program])


def test_shuffle_period_defaults_to_program_count(demo_pair):
    assert compile_programs(demo_pair).key.shuffle_period == 2
    assert compile_programs(demo_pair, RunConfig(shuffle_period=0)).key.shuffle_period is None
