from decorrelator import artifacts
from decorrelator.config import RunConfig
from decorrelator.core.compiler import compile_programs
from decorrelator.core.evaluator import outputs_by_origin, run
from decorrelator.core.frontend import desugar_if, infer_resets, load_program, parse_program
from decorrelator.core.programs import DEMO_SOURCES
from decorrelator.core.reference import interpret, rendered
from demo.seed import PROGRAMS_DIR, seed_if_empty, write_sources


def test_bundled_sources_match_the_demo_pair():
    for name, source in DEMO_SOURCES.items():
        bundled = load_program(PROGRAMS_DIR / f"{name}.lcfi")
        expected = parse_program(source, name=name)
        assert bundled.name == name
        assert bundled.declarations == expected.declarations
        assert bundled.statements == expected.statements


def test_write_sources_leaves_existing_files(tmp_path):
    (tmp_path / "p1.lcfi").write_text("# mine\n")
    paths = write_sources(tmp_path)
    assert [p.name for p in paths] == ["p1.lcfi", "p2.lcfi"]
    assert (tmp_path / "p1.lcfi").read_text() == "# mine\n"
    assert (tmp_path / "p2.lcfi").read_text() == DEMO_SOURCES["p2"]


def test_seed_populates_empty_directory_once(tmp_path):
    with artifacts.override_artifact_dir(tmp_path):
        assert seed_if_empty(RunConfig(seed=5)) is True
        assert (tmp_path / artifacts.LISTING_FILE).exists()
        assert (tmp_path / artifacts.OUTPUTS_FILE).read_text() in (
            '"sum", 45\n"powers", 2046\n', '"powers", 2046\n"sum", 45\n',
        )
        listing = (tmp_path / artifacts.LISTING_FILE).read_text()
        assert seed_if_empty(RunConfig(seed=6)) is False
        assert (tmp_path / artifacts.LISTING_FILE).read_text() == listing


def test_collatz_sample_merges_with_the_sum_program():
    collatz = load_program(PROGRAMS_DIR / "collatz.lcfi")
    assert rendered(interpret(infer_resets(desugar_if(collatz)))) == ['"steps", 111']
    partner = load_program(PROGRAMS_DIR / "p1.lcfi")
    result = compile_programs([collatz, partner], RunConfig(seed=8))
    outcome = run(result.program, result.key, result.layout)
    grouped = outputs_by_origin(outcome.outputs, result.provenance.origins)
    assert [r.value for r in grouped["collatz"]] == [111]
    assert [r.value for r in grouped["p1"]] == [45]
