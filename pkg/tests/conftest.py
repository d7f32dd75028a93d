import os
import pytest


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="also run full-size benchmarks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size benchmark runs")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session", autouse=True)
def set_test_env(tmp_path_factory):
    artifact_dir = tmp_path_factory.mktemp("artifacts")
    os.environ["DECORRELATOR_ARTIFACT_DIR"] = str(artifact_dir)
    os.environ["SECRET_KEY"] = "test-secret-key-for-testing"
    for key in ("DECORRELATOR_SEED", "DECORRELATOR_SHUFFLE_PERIOD", "DECORRELATOR_ID_BOUND",
                "DECORRELATOR_PAGE_BITS", "DECORRELATOR_JUNK_RATIO", "DECORRELATOR_STATEMENT_SHUFFLE"):
        os.environ.pop(key, None)


@pytest.fixture(scope="session")
def demo_pair():
    from decorrelator.core.programs import demo_pair
    return demo_pair()


@pytest.fixture(scope="session")
def demo_compiled(demo_pair):
    from decorrelator.config import RunConfig
    from decorrelator.core.compiler import compile_programs
    return compile_programs(demo_pair, RunConfig(seed=7))
