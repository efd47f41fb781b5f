import numpy as np
import pytest

from src import jets
from src.config import SolverSettings
from src.layers import layer_grid, pi0_solve, q0_solve
from src.pencil import classify_and_verify
from src.problems import LinearTurningProblem, NonlinearTurningProblem
from src.regular import build_regular_series


class CoupledTurningProblem(LinearTurningProblem):
    """The linear problem with x_2 entering the algebraic component: f_1 = x_1 - s_1 + 0.5 (x_2 - s_2)."""

    @classmethod
    def name(cls) -> str:
        return 'coupled'

    def vector_field(self, x, t, eps):
        s = self.source(t)
        base = super().vector_field(x, t, eps)
        return base + jets.stack([0.5 * (x[1] - s[1]), 0.0 * x[1], 0.0 * x[2]])


class NonTurningProblem(LinearTurningProblem):
    """A(0, 0) nonsingular: no turning point at t=0."""

    @classmethod
    def name(cls) -> str:
        return 'non-turning'

    def matrix(self, t, eps):
        return jets.diag([1.0 + t, 1.0, 1.0])


@pytest.fixture(scope='session')
def settings():
    return SolverSettings(verbose=False)


@pytest.fixture(scope='session')
def ltp1():
    return LinearTurningProblem()


@pytest.fixture(scope='session')
def ntp1():
    return NonlinearTurningProblem()


@pytest.fixture(scope='session')
def coupled():
    return CoupledTurningProblem()


@pytest.fixture(scope='session')
def ltp1_series(ltp1):
    return build_regular_series(ltp1, 2)


@pytest.fixture(scope='session')
def ntp1_series(ntp1):
    return build_regular_series(ntp1, 1)


@pytest.fixture(scope='session')
def ltp1_structure(ltp1, ltp1_series):
    structure, _ = classify_and_verify(ltp1, ltp1_series)
    return structure


@pytest.fixture(scope='session')
def ntp1_structure(ntp1, ntp1_series):
    structure, _ = classify_and_verify(ntp1, ntp1_series)
    return structure


@pytest.fixture(scope='session')
def ltp1_leading(ltp1, ltp1_structure):
    """Order-0 layers of the linear problem with its matched constants."""
    pi = pi0_solve(ltp1, ltp1_structure, [0.1], layer_grid(ltp1_structure, 'start'))
    q = q0_solve(ltp1, ltp1_structure, [0.1, 0.1], layer_grid(ltp1_structure, 'end'))
    return pi, q


def reduced_source(t) -> np.ndarray:
    """Reduced solution shared by the built-in problems."""
    t = np.asarray(t, dtype=float)
    return np.stack([1 + t ** 2, np.exp(-t), np.cos(t)], axis=-1)
