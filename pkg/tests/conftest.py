import warnings

import numpy as np
import pytest
from hypothesis import settings

from partvar.model import DependenceMatrix, SampleCounts

settings.register_profile("default", deadline=None)
settings.load_profile("default")

_ACCEPTANCE = {}


@pytest.fixture(autouse=True)
def _quiet_conc_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*outside \\[0, 1\\]")
        yield


@pytest.fixture
def fix_a():
    """N=(50,50), m=(1,1), c=(1,0)."""
    return SampleCounts.from_arrays([50, 50], [1.0, 1.0], [1.0, 0.0])


@pytest.fixture
def c_zero():
    return DependenceMatrix.zeros(2)


@pytest.fixture
def c_001():
    return DependenceMatrix.uniform(2, 0.01)


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        _ACCEPTANCE[report.nodeid] = report.outcome
    elif "test_acceptance.py" in report.nodeid and report.when == "setup" and report.outcome != "passed":
        _ACCEPTANCE[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, outcome in _ACCEPTANCE.items():
        name = nodeid.split("::")[-1]
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
