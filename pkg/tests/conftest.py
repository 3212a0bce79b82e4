import numpy as np
import pytest

from oseenlab.grid import Grid


@pytest.fixture(scope="session")
def small():
    """Coarse grid for fast unit tests."""
    return Grid(L_xi=12.0, N_xi=64, N_z=4)


@pytest.fixture(scope="session")
def default_grid():
    return Grid()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (title, passed, detail), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {n:2d} {title}: {detail}")
