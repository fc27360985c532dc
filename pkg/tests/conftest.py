from pathlib import Path

import numpy as np
import pytest

from hierflow.scenario import build_problem, parse_scenario

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"


def load_scenario(name):
    return parse_scenario((SCENARIOS / name).read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def hier_scenario():
    return load_scenario("hierarchical.scn")


@pytest.fixture(scope="session")
def hier_problem(hier_scenario):
    return build_problem(hier_scenario)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
