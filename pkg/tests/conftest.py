import math
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from impulse_stopper import closedform as cf
from impulse_stopper.acceptance import smooth_fit_params

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=400, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def ex1_params():
    """Example 1 with the cost that makes the closed form a QVI solution."""
    return smooth_fit_params()


@pytest.fixture(scope="session")
def ex1_sol(ex1_params):
    return cf.example1_solve(ex1_params)


@pytest.fixture(scope="session")
def ex1_game(ex1_params):
    return cf.example1_game(ex1_params)


@pytest.fixture(scope="session")
def ex2_sol():
    return cf.example2_solve(cf.Example2Params())


@pytest.fixture(scope="session")
def ex2_jump_sol():
    return cf.example2_solve(cf.Example2Params(jump_marks=(-0.2,), jump_rates=(0.5,)))


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def finite(v):
    return math.isfinite(v)


# acceptance lines are collected here and echoed in the terminal summary
_CRITERIA = []


@pytest.fixture
def criterion_report():
    def record(line):
        print(line)
        _CRITERIA.append(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
