"""Populate an artifact directory with the compiled two-program demo if it's empty."""
import logging
from pathlib import Path

from decorrelator import artifacts
from decorrelator.config import RunConfig
from decorrelator.core.compiler import compile_programs
from decorrelator.core.evaluator import run
from decorrelator.core.frontend import load_program
from decorrelator.core.programs import DEMO_SOURCES

logger = logging.getLogger(__name__)

PROGRAMS_DIR = Path(__file__).parent / "programs"


def write_sources(target: Path = PROGRAMS_DIR) -> list[Path]:
    """Write the bundled demo pair as .lcfi files (leaves existing files alone)."""
    target.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, source in DEMO_SOURCES.items():
        path = target / f"{name}.lcfi"
        if not path.exists():
            path.write_text(source, encoding="utf-8")
        paths.append(path)
    return paths


def seed_if_empty(config: RunConfig = None) -> bool:
    """Compile and run the demo into the active artifact directory.

    Returns False without touching anything when a listing is already there.
    """
    base = artifacts.get_artifact_dir()
    if (base / artifacts.LISTING_FILE).exists():
        return False
    programs = [load_program(path) for path in write_sources()]
    result = compile_programs(programs, config or RunConfig.from_env())
    artifacts.save_compile_result(result, base)
    outcome = run(result.program, result.key, result.layout)
    artifacts.save_outputs(outcome.outputs)
    artifacts.save_trace(outcome.trace)
    logger.info("seeded demo artifacts in %s", base)
    return True


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    seed_if_empty()
