"""
Built-in turning-point problems and the problem registry.
"""
import numpy as np

from src import jets
from src.errors import ProblemNotFoundError
from src.problem import BVPProblem


class LinearTurningProblem(BVPProblem):
    """
    Decoupled linear problem on [0, 1/2] with a turning point at t=0:

        A(t, eps) = diag(t/(1+t), 1, 1),  f(x, t, eps) = B(t)(x - s(t)),
        B(t) = diag(1, 1+t, -(1+t)),  s(t) = (1+t^2, exp(-t), cos t).

    x_3 is prescribed at t=0 and x_1, x_2 at t=T, each 0.1 away from the reduced solution s.
    """
    n = 3
    default_T = 0.5
    max_order = 6

    @classmethod
    def name(cls) -> str:
        return 'ltp1'

    @staticmethod
    def source(t):
        return 1 + t ** 2, jets.exp(-t), jets.cos(t)

    def matrix(self, t, eps):
        return jets.diag([t / (1 + t), 1.0, 1.0])

    def vector_field(self, x, t, eps):
        s = self.source(t)
        return jets.stack([
            x[0] - s[0],
            (1 + t) * (x[1] - s[1]),
            -(1 + t) * (x[2] - s[2]),
        ])

    def boundary_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        M = np.zeros((3, 3))
        N = np.zeros((3, 3))
        M[2, 2] = 1.0
        N[0, 0] = 1.0
        N[1, 1] = 1.0
        return M, N

    def default_d_coeffs(self) -> list[np.ndarray]:
        s_end = np.array(self.source(self.T), dtype=float)
        s_start = np.array(self.source(0.0), dtype=float)
        return [np.array([s_end[0] + 0.1, s_end[1] + 0.1, s_start[2] + 0.1])]

    def reduced_guess(self, t: float) -> np.ndarray:
        return np.array(self.source(t), dtype=float) + 0.05


class NonlinearTurningProblem(LinearTurningProblem):
    """
    :class:`LinearTurningProblem` plus the quadratic term 0.25 (0, (x_2-s_2)^2, (x_3-s_3)^2), which leaves
    the reduced solution and its Jacobian unchanged but makes both boundary layers nonlinear.
    """
    tube_radius = 1.0

    @classmethod
    def name(cls) -> str:
        return 'ntp1'

    def vector_field(self, x, t, eps):
        s = self.source(t)
        quadratic = jets.stack([0.0, (x[1] - s[1]) ** 2, (x[2] - s[2]) ** 2])
        return super().vector_field(x, t, eps) + 0.25 * quadratic


_REGISTRY: dict[str, type[BVPProblem]] = {
    cls.name(): cls for cls in (LinearTurningProblem, NonlinearTurningProblem)
}


def list_problems() -> list[str]:
    return sorted(_REGISTRY)


def registry_get(name: str, **overrides) -> BVPProblem:
    """
    Instantiate a built-in problem.

    :param name: registry name of the problem.
    :param overrides: constructor overrides (``T``, ``d_coeffs``).
    :return: the wired problem instance.
    :raises ProblemNotFoundError: if no problem is registered under `name`.
    """
    if name not in _REGISTRY:
        raise ProblemNotFoundError(name, list_problems())
    return _REGISTRY[name](**overrides)
