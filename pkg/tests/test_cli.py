import json

import pytest

from app.main import EXIT_FUEL, EXIT_PROGRAM, EXIT_TRUSTED, EXIT_USAGE, main
from decorrelator import artifacts


@pytest.fixture
def compiled_dir(tmp_path):
    assert main(["compile", "--demo", "--dir", str(tmp_path), "--seed", "3"]) == 0
    return tmp_path


def test_compile_writes_listing_and_trusted_material(tmp_path, capsys):
    assert main(["compile", "--demo", "--dir", str(tmp_path), "--seed", "3"]) == 0
    assert "compiled 2 program(s)" in capsys.readouterr().out
    assert (tmp_path / artifacts.LISTING_FILE).exists()
    for name in (artifacts.KEY_FILE, artifacts.LAYOUT_FILE, artifacts.PROVENANCE_FILE):
        assert (tmp_path / artifacts.TRUSTED_DIR / name).exists()


def test_compile_source_files(tmp_path, capsys):
    sources = tmp_path / "src"
    sources.mkdir()
    (sources / "first.lcfi").write_text('int a\ntrue : a = 6 * 7\ntrue : print("answer", a)\n')
    (sources / "second.lcfi").write_text('bool b\ntrue : b = !b\ntrue : print("flag", b)\n')
    out_dir = tmp_path / "out"
    assert main(["compile", str(sources / "first.lcfi"), str(sources / "second.lcfi"), "--dir", str(out_dir)]) == 0
    capsys.readouterr()
    assert main(["run", "--dir", str(out_dir)]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert sorted(printed) == ['"answer", 42', '"flag", true']


def test_run_prints_and_saves_outputs(compiled_dir, capsys):
    capsys.readouterr()
    assert main(["run", "--dir", str(compiled_dir)]) == 0
    out = capsys.readouterr().out
    assert '"sum", 45' in out
    assert '"powers", 2046' in out
    assert (compiled_dir / artifacts.OUTPUTS_FILE).read_text() == out
    assert (compiled_dir / artifacts.TRACE_FILE).exists()


def test_run_with_shuffling_disabled_prints_the_same(compiled_dir, capsys):
    main(["run", "--dir", str(compiled_dir)])
    shuffled = capsys.readouterr().out
    assert main(["run", "--dir", str(compiled_dir), "--shuffle-period", "inf", "--no-trace"]) == 0
    assert capsys.readouterr().out == shuffled


def test_analyze_reports_attack_and_clean_audit(compiled_dir, capsys):
    main(["run", "--dir", str(compiled_dir)])
    capsys.readouterr()
    assert main(["analyze", "--dir", str(compiled_dir), "--correlator", "physical", "--json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["n"] == 2
    assert report["baseline_fraction"]
    assert report["audit"] == []
    assert report["attack"]["correlator"] == "physical"
    saved = json.loads((compiled_dir / artifacts.REPORT_FILE).read_text())
    assert saved["analyze"]["attack"] == report["attack"]


def test_analyze_text_report(compiled_dir, capsys):
    main(["run", "--dir", str(compiled_dir)])
    capsys.readouterr()
    assert main(["analyze", "--dir", str(compiled_dir)]) == 0
    out = capsys.readouterr().out
    assert "Trace attack (both)" in out
    assert "Boundary audit: clean" in out


def test_bench_small_sizes(tmp_path, capsys):
    argv = ["bench", "--dir", str(tmp_path), "--average-n", "10", "--dot-n", "10", "--repetitions", "1", "--json"]
    assert main(argv) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["outputs_match"] is True
    assert set(data["solo_seconds"]) == {"average", "dot"}
    assert "bench" in json.loads((tmp_path / artifacts.REPORT_FILE).read_text())


def test_compile_is_deterministic(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    for target in (first, second):
        assert main(["compile", "--demo", "--dir", str(target), "--seed", "11"]) == 0
    assert (first / artifacts.LISTING_FILE).read_bytes() == (second / artifacts.LISTING_FILE).read_bytes()
    key_path = artifacts.TRUSTED_DIR + "/" + artifacts.KEY_FILE
    assert (first / key_path).read_bytes() == (second / key_path).read_bytes()


# ── exit codes ────────────────────────────────────────────────────────────────

def test_usage_errors_exit_two(tmp_path):
    assert main(["compile", "--dir", str(tmp_path)]) == EXIT_USAGE
    assert main(["compile", "--demo", "--dir", str(tmp_path), "--alpha", "5", "--beta", "3"]) == EXIT_USAGE
    assert main(["compile", "--demo", "--dir", str(tmp_path), "--shuffle-period", "often"]) == EXIT_USAGE
    assert main(["no-such-command"]) == EXIT_USAGE


def test_bad_program_exits_one(tmp_path):
    bad = tmp_path / "bad.lcfi"
    bad.write_text("int a\ntrue : a = = 1\n")
    assert main(["compile", str(bad), "--dir", str(tmp_path)]) == EXIT_PROGRAM
    assert main(["compile", str(tmp_path / "missing.lcfi"), "--dir", str(tmp_path)]) == EXIT_PROGRAM


def test_fuel_exhaustion_exits_four(compiled_dir):
    assert main(["run", "--dir", str(compiled_dir), "--fuel", "5"]) == EXIT_FUEL


def test_missing_trusted_material_exits_five(tmp_path):
    assert main(["run", "--dir", str(tmp_path)]) == EXIT_TRUSTED


def test_tampered_key_exits_five(compiled_dir, capsys):
    path = compiled_dir / artifacts.TRUSTED_DIR / artifacts.KEY_FILE
    data = json.loads(path.read_text())
    data["sk"] += 1
    path.write_text(json.dumps(data))
    assert main(["run", "--dir", str(compiled_dir)]) == EXIT_TRUSTED
    assert "trusted material unavailable" in capsys.readouterr().err


def test_float_overflow_runs_to_infinity(tmp_path, capsys):
    source = tmp_path / "big.lcfi"
    source.write_text('float x = 300000000000000000000000000000000000000.0\ntrue : x = x + x\ntrue : print("x", x)\n')
    out_dir = tmp_path / "out"
    assert main(["compile", str(source), "--dir", str(out_dir)]) == 0
    capsys.readouterr()
    assert main(["run", "--dir", str(out_dir)]) == 0
    assert capsys.readouterr().out == '"x", inf\n'
