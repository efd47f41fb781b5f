"""
Regular part of the expansion: the reduced solution and the higher regular terms, sampled on a Chebyshev grid.
"""
from __future__ import annotations

from functools import cached_property

import numpy as np
from pandas import DataFrame
from scipy.interpolate import BarycentricInterpolator

from src.errors import IsolationError, ReducedSolveError, SingularJacobian, SolverFailure
from src.jets import Jet
from src.problem import BVPProblem
from src.rootfind import damped_newton
from src.util import log_message, save_frame


def chebyshev_points(T: float, degree: int) -> np.ndarray:
    """Chebyshev extreme points on [0, T], in increasing order."""
    j = np.arange(degree + 1)
    return T / 2 * (1 - np.cos(np.pi * j / degree))


def differentiation_matrix(nodes: np.ndarray) -> np.ndarray:
    """Spectral differentiation matrix on Chebyshev extreme points (any affine image)."""
    m = len(nodes) - 1
    w = (-1.0) ** np.arange(m + 1)
    w[0] /= 2
    w[-1] /= 2
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


class SeriesField:
    """
    Samples of the regular terms x_0, ..., x_k on Chebyshev points of [0, T]. Immutable: filling a new order
    returns a new field.
    """

    def __init__(self, T: float, degree: int, values: tuple[np.ndarray, ...] = ()):
        self.T = T
        self.degree = degree
        self.grid = chebyshev_points(T, degree)
        self._values = tuple(np.asarray(v, dtype=float) for v in values)

    @property
    def order(self) -> int:
        return len(self._values) - 1

    @property
    def n(self) -> int:
        return self._values[0].shape[1]

    def values(self, k: int) -> np.ndarray:
        return self._values[k]

    def with_order(self, k: int, values: np.ndarray) -> SeriesField:
        if k != self.order + 1:
            raise ValueError(f'Order {k} cannot follow order {self.order}.')
        return SeriesField(self.T, self.degree, self._values + (values,))

    @cached_property
    def D(self) -> np.ndarray:
        return differentiation_matrix(self.grid)

    def node_derivative(self, k: int, r: int = 1) -> np.ndarray:
        """r-th derivative of x_k at the grid points, shape (m+1, n)."""
        out = self._values[k]
        for _ in range(r):
            out = self.D @ out
        return out

    def eval(self, k: int, t) -> np.ndarray:
        return BarycentricInterpolator(self.grid, self._values[k], axis=0)(t)

    def deriv(self, k: int, t, r: int = 1) -> np.ndarray:
        return BarycentricInterpolator(self.grid, self.node_derivative(k, r), axis=0)(t)

    def to_frame(self) -> DataFrame:
        rows = {'t': [], 'k': [], 'component': [], 'value': []}
        for k, vals in enumerate(self._values):
            for j, t in enumerate(self.grid):
                for i in range(vals.shape[1]):
                    rows['t'].append(t)
                    rows['k'].append(k)
                    rows['component'].append(i)
                    rows['value'].append(vals[j, i])
        return DataFrame(rows)

    def to_csv(self, save_dir: str | None, name: str = 'series') -> str:
        return save_frame(self.to_frame(), save_dir, name)


def solve_reduced(
        problem: BVPProblem,
        degree: int = 32,
        tol: float = 1e-12,
        max_iter: int = 50,
        max_halvings: int = 30,
        verbose: bool = False) -> SeriesField:
    """
    Solve f(x_0(t), t, 0) = 0 on the Chebyshev grid by damped Newton continuation from node to node.

    :raises IsolationError: if the Jacobian is singular along the branch.
    :raises ReducedSolveError: if Newton fails to converge at a node.
    """
    grid = chebyshev_points(problem.T, degree)
    f = problem.f
    values = np.zeros((degree + 1, problem.n))
    guess = np.asarray(problem.reduced_guess(grid[0]), dtype=float)
    total = 0
    for j, t in enumerate(grid):
        try:
            res = damped_newton(
                lambda x: f.eval(x, t, 0.0), guess, lambda x: f.jac(x, t, 0.0), tol=tol,
                it_max=max_iter, max_halvings=max_halvings, cond_limit=1e14)
        except SingularJacobian as e:
            raise IsolationError(f'Jacobian of the reduced equation is singular at t={t:.6g}: {e}') from e
        except SolverFailure as e:
            raise ReducedSolveError(f'Reduced equation did not converge at t={t:.6g}: {e}') from e
        values[j] = res.x
        guess = res.x
        total += res.iterations
    if verbose:
        log_message('RegularSeries', f'reduced solution on {degree + 1} nodes, {total} Newton steps')
    return SeriesField(problem.T, degree, (values,))


def _gbar_nodes(problem: BVPProblem, series: SeriesField, k: int) -> np.ndarray:
    coeffs = [series.values(j).T for j in range(k)] + [np.zeros((problem.n, len(series.grid)))]
    x_jet = Jet.from_coefficients(coeffs)
    return problem.f.eval_jet(x_jet, series.grid, k).coeff(k).T


def extract_gbar(problem: BVPProblem, series: SeriesField, k: int, t: float) -> np.ndarray:
    """
    Coefficient of eps**k in f(x_0(t) + eps x_1(t) + ... + eps**(k-1) x_{k-1}(t), t, eps).
    """
    if series.order < k - 1:
        raise ValueError(f'Series filled through order {series.order}, order {k - 1} required.')
    coeffs = [series.eval(j, t) for j in range(k)] + [np.zeros(problem.n)]
    return problem.f.eval_jet(Jet.from_coefficients(coeffs), t, k).coeff(k)


def regular_term(problem: BVPProblem, series: SeriesField, k: int) -> SeriesField:
    """
    x_k = f_x^{-1} (sum_i A_i x'_{k-1-i} - gbar_k) at every grid point.

    :raises IsolationError: if f_x is ill-conditioned (cond > 1e12) at a grid point.
    """
    if series.order != k - 1:
        raise ValueError(f'Series filled through order {series.order}, cannot compute order {k}.')
    gbar = _gbar_nodes(problem, series, k)
    derivs = [series.node_derivative(j) for j in range(k)]
    jacs = problem.f.jac_many(series.values(0), series.grid, 0.0)
    values = np.zeros_like(series.values(0))
    for j, t in enumerate(series.grid):
        rhs = -gbar[j]
        for i in range(k):
            rhs = rhs + problem.A.coeff(t, i) @ derivs[k - 1 - i][j]
        if np.linalg.cond(jacs[j]) > 1e12:
            raise IsolationError(f'f_x is near-singular at t={t:.6g}; regular term {k} is undefined.')
        values[j] = np.linalg.solve(jacs[j], rhs)
    return series.with_order(k, values)


def build_regular_series(problem: BVPProblem, order: int, degree: int = 32, tol: float = 1e-12,
                         verbose: bool = False) -> SeriesField:
    series = solve_reduced(problem, degree=degree, tol=tol, verbose=verbose)
    for k in range(1, order + 1):
        series = regular_term(problem, series, k)
    return series
