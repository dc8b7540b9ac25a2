import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hybridrisk.core import LevelDependentGenerator, RiskModelSpec, StateFunction, StatePartition
from hybridrisk.matrixkit import PhaseType
from hybridrisk.models import cramer_lundberg

settings.register_profile("default", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def single_state(mu, sigma=0.0, name="drift"):
    """One premium state with drift ``mu`` and volatility ``sigma`` and no switching."""
    part = StatePartition((0,), names=("p",))
    return RiskModelSpec(part, StateFunction([mu]), StateFunction([sigma]),
                         LevelDependentGenerator.constant([[0.0]]), 0.0, name)


@pytest.fixture
def cl_model():
    return cramer_lundberg(1.0, 1.0, PhaseType.exponential(2.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record(criterion, ok, detail):
    """Store one acceptance line; printed in the terminal summary."""
    ACCEPTANCE_LINES.append(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
