import sys
from pathlib import Path

import pytest

HERE = Path(__file__).resolve().parent
ROOT = HERE.parent
DEMO = ROOT / "demo"

# oracles.py lives next to the tests and is imported as a plain module
sys.path.insert(0, str(HERE))


@pytest.fixture
def demo() -> Path:
    return DEMO


@pytest.fixture
def pancake_world():
    from star.worldfile import load_world

    return load_world(DEMO / "pancake.world")


@pytest.fixture
def pancake_tree():
    from star.harness import tree_from_file

    return tree_from_file(DEMO / "pancake.foon", "pancake | cooked")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    # keep the call-phase outcome on the item so fixtures can see it at teardown
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep
