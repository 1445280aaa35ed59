from importlib.resources import files
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA_DIR = Path(__file__).parent / "data"
TAXI_FIXTURE = Path(str(files("statecompress") / "data" / "taxi_fixture.csv"))

TWO_STATE = np.array([[0.9, 0.1], [0.2, 0.8]])


@pytest.fixture
def two_state():
    return TWO_STATE.copy()


def lazy_reversible_chain(p, rng):
    """Random reversible chain with nonnegative spectrum: (I + P_w) / 2 for a weighted graph walk."""
    W = rng.random((p, p))
    W = W + W.T
    P = W / W.sum(axis=1, keepdims=True)
    return 0.5 * (np.eye(p) + P)


# acceptance verdicts, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
