import numpy as np
import pytest

from blendopt.graph import erdos_renyi
from blendopt.problems import random_quadratic_ensemble


@pytest.fixture(scope="session")
def small_problem():
    """Five agents in R^3 on a connected random graph."""
    ens = random_quadratic_ensemble(5, 3, 1.0, 10.0, seed=3)
    return erdos_renyi(5, 0.5, seed=3), ens


@pytest.fixture(scope="session")
def desk_problem():
    """Twelve agents in R^6, condition 100, on G(12, 0.2)."""
    ens = random_quadratic_ensemble(12, 6, 1.0, 100.0, seed=0)
    return erdos_renyi(12, 0.2, seed=0), ens


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
