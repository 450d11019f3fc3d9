import numpy as np
import pytest

from parabolic_ssc.instances import convex_baseline, indefinite_exponential, sparse_cubic
from parabolic_ssc.grid import SpaceTimeGrid
from parabolic_ssc.problem import CostIntegrands, OperatorA, ProblemSpec, cubic

# pass/fail lines collected by the acceptance tests
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid1():
    return SpaceTimeGrid(1, 15, 16, 1.0)


@pytest.fixture(scope="session")
def grid2():
    return SpaceTimeGrid(2, 7, 8, 0.5)


def random_spec(grid, f, rng, nu_omega=0, mu=0.0, b=None):
    """Problem with smooth random targets; used across modules."""
    from parabolic_ssc.grid import smooth_random_field

    y_d = smooth_random_field(grid, rng, noise_fraction=0.0)
    y_om = smooth_random_field(grid, rng, noise_fraction=0.0).terminal() if nu_omega else None
    y0 = 0.3 * smooth_random_field(grid, rng, noise_fraction=0.0).terminal()
    A = OperatorA(np.eye(grid.d), b)
    return ProblemSpec(grid, A, f, CostIntegrands(y_d, nu_omega, y_om), -1.0, 1.0, mu, y0)


@pytest.fixture(scope="session")
def baseline():
    return convex_baseline()


@pytest.fixture(scope="session")
def sparse():
    return sparse_cubic()


@pytest.fixture(scope="session")
def indefinite():
    return indefinite_exponential()


@pytest.fixture(scope="session")
def cubic_f():
    return cubic()
