"""
High-accuracy reference solution of the full problem at fixed eps: implicit midpoint collocation of
eps A(t, eps) x' = f(x, t, eps) on a Shishkin mesh, kept in the non-inverted form so that the turning point needs
no special treatment, plus the boundary row M x(0) + N x(T) = d(eps).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import log
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline

from src.errors import ReferenceSolveError, SolverFailure
from src.problem import BVPProblem
from src.regular import solve_reduced
from src.rootfind import damped_newton
from src.util import log_message


@dataclass(frozen=True)
class MeshSpec:
    """
    :ivar intervals: number of mesh intervals, a multiple of 4.
    :ivar constant: transition constant C of the width min(T/4, C eps ln(1/eps)); None means order + 2.
    :ivar order: order of the expansion the mesh is meant to resolve.
    """
    intervals: int = 4096
    constant: float | None = None
    order: int = 0

    def __post_init__(self):
        if self.intervals < 4 or self.intervals % 4 != 0:
            raise ValueError(f'Mesh intervals must be a positive multiple of 4, got {self.intervals}.')

    def transition(self, T: float, eps: float) -> float:
        C = self.constant if self.constant is not None else self.order + 2
        return min(T / 4, C * eps * max(log(1 / eps), 1.0))


def shishkin_mesh(T: float, eps: float, spec: MeshSpec = MeshSpec()) -> np.ndarray:
    """
    Piecewise uniform mesh: a quarter of the intervals in each transition region [0, sigma] and [T - sigma, T],
    half in the middle.
    """
    sigma = spec.transition(T, eps)
    q = spec.intervals // 4
    return np.concatenate([
        np.linspace(0.0, sigma, q + 1),
        np.linspace(sigma, T - sigma, 2 * q + 1)[1:],
        np.linspace(T - sigma, T, q + 1)[1:],
    ])


@dataclass
class ReferenceSolution:
    eps: float
    mesh: np.ndarray
    values: np.ndarray
    scheme_order: int
    newton_iterations: int
    residual: float

    @cached_property
    def _spline(self) -> CubicSpline:
        return CubicSpline(self.mesh, self.values, axis=0)

    def eval(self, t) -> np.ndarray:
        return self._spline(np.asarray(t, dtype=float))


class _MidpointSystem:

    def __init__(self, problem: BVPProblem, eps: float, mesh: np.ndarray):
        self.problem = problem
        self.eps = eps
        self.mesh = mesh
        self.h = np.diff(mesh)
        self.t_mid = (mesh[:-1] + mesh[1:]) / 2
        self.A_mid = np.array([problem.A.value(t, eps) for t in self.t_mid])
        self.d = problem.bc.d(eps)
        n, m = problem.n, len(self.h)
        i = np.arange(m)[:, None, None] * n
        a = np.arange(n)
        self._rows = np.broadcast_to(i + a[None, :, None], (m, n, n)).ravel()
        self._cols = np.broadcast_to(i + a[None, None, :], (m, n, n)).ravel()
        self._bc_rows = np.repeat(m * n + a, n)
        self._bc_cols = np.tile(a, n)
        self.size = (m + 1) * n

    def residual(self, z: np.ndarray) -> np.ndarray:
        n, f = self.problem.n, self.problem.f
        x = z.reshape(-1, n)
        dx = (x[1:] - x[:-1]) / self.h[:, None]
        mid = (x[1:] + x[:-1]) / 2
        col = self.eps * np.einsum('pij,pj->pi', self.A_mid, dx) - f.eval_many(mid, self.t_mid, self.eps)
        bc = self.problem.bc
        return np.concatenate([col.ravel(), bc.M @ x[0] + bc.N @ x[-1] - self.d])

    def jacobian(self, z: np.ndarray) -> sp.csc_matrix:
        n, m = self.problem.n, len(self.h)
        x = z.reshape(-1, n)
        J = self.problem.f.jac_many((x[1:] + x[:-1]) / 2, self.t_mid, self.eps)
        scaled = self.eps * self.A_mid / self.h[:, None, None]
        left, right = -scaled - J / 2, scaled - J / 2
        bc = self.problem.bc
        data = np.concatenate([left.ravel(), right.ravel(), bc.M.ravel(), bc.N.ravel()])
        rows = np.concatenate([self._rows, self._rows, self._bc_rows, self._bc_rows])
        cols = np.concatenate([self._cols, self._cols + n, self._bc_cols, self._bc_cols + m * n])
        return sp.csc_matrix((data, (rows, cols)), shape=(self.size, self.size))


def _initial_guess(problem: BVPProblem, mesh: np.ndarray, guess) -> np.ndarray:
    if guess is None:
        return solve_reduced(problem).eval(0, mesh)
    if callable(guess):
        return np.asarray(guess(mesh), dtype=float)
    guess = np.asarray(guess, dtype=float)
    if guess.shape != (len(mesh), problem.n):
        raise ValueError(f'Initial guess must have shape {(len(mesh), problem.n)}, got {guess.shape}.')
    return guess


def _solve_on(problem: BVPProblem, eps: float, mesh: np.ndarray, x0: np.ndarray, tol: float,
              max_iter: int) -> tuple[np.ndarray, int, float]:
    system = _MidpointSystem(problem, eps, mesh)
    try:
        res = damped_newton(system.residual, x0.ravel(), system.jacobian, tol=tol, it_max=max_iter)
    except SolverFailure as e:
        raise ReferenceSolveError(f'Reference solve failed at eps={eps:.3g} on {len(mesh) - 1} intervals: {e}; '
                                  'try a finer mesh or a better initial guess') from e
    return res.x.reshape(-1, problem.n), res.iterations, res.residual_norm


def reference_solve(
        problem: BVPProblem,
        eps: float,
        mesh_spec: MeshSpec | None = None,
        tol: float = 1e-10,
        guess: Callable[[np.ndarray], np.ndarray] | np.ndarray | None = None,
        richardson: bool = False,
        max_iter: int = 50,
        verbose: bool = False) -> ReferenceSolution:
    """
    Solve the full problem at fixed eps by damped Newton on the midpoint equations.

    :param guess: initial values at the mesh nodes, or a callable mapping mesh nodes to values; the reduced
                  solution is used when omitted.
    :param richardson: also solve on the bisected mesh and return (4 u_fine - u_coarse)/3 at the coarse nodes.
    :raises ReferenceSolveError: if Newton stagnates or meets a singular Jacobian.
    """
    if eps <= 0:
        raise ValueError(f'eps must be positive, got {eps}.')
    mesh = shishkin_mesh(problem.T, eps, mesh_spec or MeshSpec())
    values, iterations, residual = _solve_on(problem, eps, mesh, _initial_guess(problem, mesh, guess), tol,
                                             max_iter)
    scheme_order = 2
    if richardson:
        fine = np.empty(2 * len(mesh) - 1)
        fine[::2] = mesh
        fine[1::2] = (mesh[:-1] + mesh[1:]) / 2
        fine_guess = np.empty((len(fine), problem.n))
        fine_guess[::2] = values
        fine_guess[1::2] = (values[:-1] + values[1:]) / 2
        fine_values, fine_iterations, _ = _solve_on(problem, eps, fine, fine_guess, tol, max_iter)
        values = (4 * fine_values[::2] - values) / 3
        iterations += fine_iterations
        scheme_order = 4
    if verbose:
        log_message('ReferenceSolver', f'eps={eps:.3g}: {len(mesh) - 1} intervals, {iterations} Newton steps, '
                                       f'residual {residual:.3e}')
    return ReferenceSolution(eps=eps, mesh=mesh, values=values, scheme_order=scheme_order,
                             newton_iterations=iterations, residual=residual)
