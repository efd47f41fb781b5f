"""
Boundary-layer terms at both ends of [0, T].

The start layer Pi lives in tau = t/eps >= 0 and is solved in the normalized coordinates Pi = Q y, where the first
row of the layer system is algebraic. The end layer lives in xi = (t - T)/eps <= 0 and is solved in the eigen
coordinates Q = U R. The semi-infinite domains are truncated at a distance where exp(-40) is reached.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import factorial
from typing import Callable, Literal

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from pandas import DataFrame
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from src.errors import AlgebraicLayerError, ContractionError, SolverFailure, StiffnessError, TurningDegeneracyError
from src.jets import Jet
from src.pencil import PencilStructure
from src.problem import BVPProblem
from src.regular import SeriesField
from src.rootfind import damped_newton
from src.util import log_message, save_frame

Side = Literal['start', 'end']
Block = Literal['plus', 'minus']

_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(3)


@dataclass(frozen=True, eq=False)
class LayerGrid:
    """
    Nodes of a truncated layer domain, graded geometrically toward the anchor. ``distance`` is |tau| or |xi|,
    increasing from 0.
    """
    side: Side
    distance: np.ndarray

    @classmethod
    def build(cls, side: Side, rate: float, n_nodes: int = 400, grading: float = 4.0,
              extent: float | None = None) -> LayerGrid:
        """
        :param rate: expected decay rate; the domain reaches at least 40/rate.
        :param n_nodes: number of nodes including the anchor.
        :param grading: strength of the clustering toward the anchor (0 < grading).
        :param extent: truncation distance overriding the default max(40/rate, 40).
        """
        if extent is None:
            extent = max(40.0 / rate, 40.0)
        u = np.linspace(0.0, 1.0, n_nodes)
        distance = extent * np.expm1(grading * u) / np.expm1(grading)
        distance[0] = 0.0
        return cls(side, distance)

    @property
    def nodes(self) -> np.ndarray:
        """Stretched time of the nodes: tau on the start side, xi (non-positive) on the end side."""
        return self.distance if self.side == 'start' else -self.distance

    @property
    def extent(self) -> float:
        return float(self.distance[-1])

    def __len__(self):
        return len(self.distance)


@dataclass(frozen=True)
class DecayEstimate:
    kappa: float
    rate: float | None
    fit_window: tuple[int, int] | None

    @property
    def undefined(self) -> bool:
        return self.rate is None

    def bound(self, distance) -> np.ndarray:
        if self.rate is None:
            return np.zeros_like(np.asarray(distance, dtype=float))
        return self.kappa * np.exp(-self.rate * np.asarray(distance, dtype=float))


@dataclass(eq=False)
class LayerSolution:
    """
    A boundary-layer term on its truncated domain.

    :ivar values: samples in original coordinates, shape (nodes, n).
    :ivar slopes: derivatives in stretched time (d/dtau or d/dxi) at the nodes.
    :ivar normalized: the same term in the coordinates it was solved in (y on the start side, R on the end side).
    :ivar parameter: the free constant the term depends on.
    """
    grid: LayerGrid
    values: np.ndarray
    slopes: np.ndarray
    side: Side
    order: int
    parameter: np.ndarray
    normalized: np.ndarray

    @property
    def anchor_value(self) -> np.ndarray:
        return self.values[0]

    @cached_property
    def _interpolant(self) -> CubicHermiteSpline:
        sign = 1.0 if self.side == 'start' else -1.0
        return CubicHermiteSpline(self.grid.distance, self.values, sign * self.slopes, axis=0)

    def _distance(self, s) -> tuple[np.ndarray, np.ndarray]:
        s = np.asarray(s, dtype=float)
        d = s if self.side == 'start' else -s
        inside = (d >= 0) & (d <= self.grid.extent)
        return np.clip(d, 0.0, self.grid.extent), inside

    def eval(self, s) -> np.ndarray:
        """Value at stretched time s; zero beyond the truncation."""
        d, inside = self._distance(s)
        return np.where(inside[..., None], self._interpolant(d), 0.0)

    def derivative(self, s) -> np.ndarray:
        d, inside = self._distance(s)
        sign = 1.0 if self.side == 'start' else -1.0
        return np.where(inside[..., None], sign * self._interpolant.derivative()(d), 0.0)

    @cached_property
    def decay(self) -> DecayEstimate:
        return decay_fit(self)

    def to_frame(self) -> DataFrame:
        nodes = self.grid.nodes
        n = self.values.shape[1]
        return DataFrame({
            'stretched_time': np.repeat(nodes, n),
            'component': np.tile(np.arange(n), len(nodes)),
            'value': self.values.ravel(),
            'order': self.order,
            'side': self.side,
        })

    def to_csv(self, save_dir: str | None, name: str | None = None) -> str:
        return save_frame(self.to_frame(), save_dir, name or f'layer-{self.side}-{self.order}')


def layer_grid(structure: PencilStructure, side: Side, n_nodes: int = 400, grading: float = 4.0,
               extent: float | None = None) -> LayerGrid:
    rate = structure.alpha_star if side == 'start' else structure.beta_star
    return LayerGrid.build(side, rate, n_nodes=n_nodes, grading=grading, extent=extent)


def decay_fit(layer: LayerSolution) -> DecayEstimate:
    """
    Exponential rate of a layer by a least-squares fit of log|values| over the nodes where the norm lies in
    [1e-10, 0.1] times its peak. ``kappa`` is the envelope of the samples over the fit window. A zero layer has
    an undefined rate.
    """
    norms = np.max(np.abs(layer.values), axis=1)
    peak = norms.max(initial=0.0)
    if peak == 0.0:
        return DecayEstimate(kappa=0.0, rate=None, fit_window=None)
    idx = np.flatnonzero((norms >= 1e-10 * peak) & (norms <= 0.1 * peak))
    if len(idx) < 2:
        idx = np.flatnonzero(norms > 0)
    if len(idx) < 2:
        return DecayEstimate(kappa=float(peak), rate=None, fit_window=None)
    d = layer.grid.distance
    slope, _ = np.polyfit(d[idx], np.log(norms[idx]), 1)
    rate = -float(slope)
    window = slice(idx[0], idx[-1] + 1)
    kappa = float(np.max(norms[window] * np.exp(rate * d[window])))
    return DecayEstimate(kappa=kappa, rate=rate, fit_window=(int(idx[0]), int(idx[-1])))


class _ExponentialSweep:
    """
    Cell-by-cell solution of z' = L z + F(s) on a distance grid with exact exponentials for L and three-point
    Gauss-Legendre for the convolution with F. F is given at the nodes and interpolated by a cubic spline.
    """

    def __init__(self, distance: np.ndarray, L: np.ndarray):
        self.s = distance
        self.L = np.atleast_2d(np.asarray(L, dtype=float))
        self.m = self.L.shape[0]
        self.h = np.diff(distance)
        mid = (distance[:-1] + distance[1:]) / 2
        self.gauss = mid[:, None] + self.h[:, None] / 2 * _GAUSS_X[None, :]
        self.weights = self.h[:, None] / 2 * _GAUSS_W[None, :]

    def _expm(self, t: np.ndarray) -> np.ndarray:
        return la.expm(t[..., None, None] * self.L)

    @cached_property
    def _outward(self) -> tuple[np.ndarray, np.ndarray]:
        return self._expm(self.h), self._expm(self.s[1:, None] - self.gauss)

    @cached_property
    def _inward(self) -> tuple[np.ndarray, np.ndarray]:
        return self._expm(-self.h), self._expm(self.s[:-1, None] - self.gauss)

    def _increments(self, kernel: np.ndarray, forcing: np.ndarray) -> np.ndarray:
        F = CubicSpline(self.s, forcing, axis=0)(self.gauss)
        return np.einsum('ng,ngij,ngj->ni', self.weights, kernel, F)

    def outward(self, z0: np.ndarray, forcing: np.ndarray) -> np.ndarray:
        """Solution with z(0) = z0, marching away from the anchor."""
        z = np.empty((len(self.s), self.m))
        z[0] = z0
        if self.m == 0:
            return z
        step, kernel = self._outward
        incr = self._increments(kernel, forcing)
        for i in range(len(self.h)):
            z[i + 1] = step[i] @ z[i] + incr[i]
        return z

    def inward(self, forcing: np.ndarray) -> np.ndarray:
        """Solution z(s) = -int_s^inf exp(L(s-u)) F(u) du, with the tail beyond the last node dropped."""
        z = np.zeros((len(self.s), self.m))
        if self.m == 0:
            return z
        step, kernel = self._inward
        incr = self._increments(kernel, forcing)
        for i in reversed(range(len(self.h))):
            z[i] = step[i] @ z[i + 1] - incr[i]
        return z


def _end_map(structure: PencilStructure) -> np.ndarray:
    """U^{-1} A(T,0)^{-1}."""
    return np.linalg.solve(structure.A_T @ structure.U, np.eye(structure.n))


def algebraic_first_component(
        problem: BVPProblem, structure: PencilStructure, pi02x: np.ndarray, tol: float = 1e-12) -> float:
    """
    First component of Pi_0 x given the others, from the algebraic row of the normalized layer system.

    :raises AlgebraicLayerError: if Newton fails on the scalar equation.
    """
    f, P, x0 = problem.f, structure.P, structure.x0_start
    pi02x = np.asarray(pi02x, dtype=float)
    f0 = f.eval(x0, 0.0, 0.0)

    def point(z):
        return x0 + np.r_[z[0], pi02x]

    def residual(z):
        return np.array([(f.eval(point(z), 0.0, 0.0) - f0) @ P[0]])

    def jac(z):
        return np.array([[P[0] @ f.jac(point(z), 0.0, 0.0)[:, 0]]])

    try:
        res = damped_newton(residual, np.zeros(1), jac, tol=tol, cond_limit=1e12)
    except SolverFailure as e:
        raise AlgebraicLayerError(f'Algebraic layer equation has no root near {pi02x}: {e}') from e
    return float(res.x[0])


def _first_normalized(problem: BVPProblem, structure: PencilStructure, y2: np.ndarray, y1: np.ndarray,
                      tol: float) -> np.ndarray:
    """y1 at every node from the algebraic row, given y2; one Newton system with a diagonal Jacobian."""
    f, P, Q, x0 = problem.f, structure.P, structure.Q, structure.x0_start
    f0 = f.eval(x0, 0.0, 0.0)
    q1 = Q[:, 0]
    base = x0 + y2 @ Q[:, 1:].T

    def residual(z):
        return (f.eval_many(base + np.outer(z, q1), 0.0, 0.0) - f0) @ P[0]

    def jac(z):
        return sp.diags(f.directional_many(base + np.outer(z, q1), q1, 0.0, 0.0) @ P[0])

    try:
        return damped_newton(residual, y1, jac, tol=tol).x
    except SolverFailure as e:
        raise AlgebraicLayerError(f'Algebraic row of the start layer cannot be solved: {e}') from e


def _pi0_nonlinearity(problem: BVPProblem, structure: PencilStructure, y: np.ndarray) -> np.ndarray:
    """[P (f(x0 + Q y) - f(x0))] with the linear part Omega y removed, rows 2..n."""
    f, P, Q, x0 = problem.f, structure.P, structure.Q, structure.x0_start
    diff = f.eval_many(x0 + y @ Q.T, 0.0, 0.0) - f.eval(x0, 0.0, 0.0)
    return (diff @ P.T)[:, 1:] - y[:, 1:] @ structure.Lambda.T


def _q0_nonlinearity(problem: BVPProblem, structure: PencilStructure, R: np.ndarray) -> np.ndarray:
    f, x0, T = problem.f, structure.x0_end, problem.T
    diff = f.eval_many(x0 + R @ structure.U.T, T, 0.0) - f.eval(x0, T, 0.0)
    return diff @ _end_map(structure).T - R * structure.W


def _contract(update: Callable[[np.ndarray], np.ndarray], start: np.ndarray, tol: float, max_iter: int,
              label: str, verbose: bool) -> np.ndarray:
    """Successive approximations z <- update(z) until the sup-norm change drops below tol."""
    z = start
    previous = None
    for it in range(1, max_iter + 1):
        new = update(z)
        change = float(np.max(np.abs(new - z), initial=0.0))
        z = new
        if change <= tol:
            if verbose:
                log_message('BoundaryLayers', f'{label}: converged in {it} iterations')
            return z
        if previous is not None and previous > 0 and it > 2 and change / previous >= 1.0:
            raise ContractionError(
                f'{label}: successive approximations do not contract (ratio {change / previous:.3f} '
                f'at iteration {it})', ratio=change / previous, iterations=it)
        previous = change
    ratio = None if not previous else change / previous
    raise ContractionError(f'{label}: no convergence in {max_iter} iterations (last change {change:.3e})',
                           ratio=ratio, iterations=max_iter)


def pi0_solve(problem: BVPProblem, structure: PencilStructure, c02m, grid: LayerGrid, tol: float = 1e-12,
              max_iter: int = 200, verbose: bool = False) -> LayerSolution:
    """
    Leading-order start layer by successive approximations of

        y_+(tau) = -int_tau^inf exp(Lambda_+ (tau - s)) l_+(s) ds,
        y_-(tau) = exp(Lambda_- tau) c + int_0^tau exp(Lambda_- (tau - s)) l_-(s) ds,

    with y_1 recovered from the algebraic row at every node and Pi_0 x = Q y.

    :raises ContractionError: if the iteration does not contract or exceeds `max_iter` steps.
    """
    p, q = structure.p, structure.q
    c = np.atleast_1d(np.asarray(c02m, dtype=float))
    if c.shape != (q,) or not np.all(np.isfinite(c)):
        raise ValueError(f'c02m must be a finite vector of length {q}, got {c02m}.')
    lam = structure.Lambda
    plus = _ExponentialSweep(grid.distance, lam[:p, :p])
    minus = _ExponentialSweep(grid.distance, lam[p:, p:])
    nodes = len(grid)
    zero_minus = np.zeros((nodes, q))

    y = np.zeros((nodes, structure.n))
    y[:, p + 1:] = minus.outward(c, zero_minus)

    def update(y_old):
        y_new = np.empty_like(y_old)
        y_new[:, 0] = _first_normalized(problem, structure, y_old[:, 1:], y_old[:, 0], tol)
        forcing = _pi0_nonlinearity(problem, structure, np.column_stack([y_new[:, 0], y_old[:, 1:]]))
        y_new[:, 1:p + 1] = plus.inward(forcing[:, :p])
        y_new[:, p + 1:] = minus.outward(c, forcing[:, p:])
        return y_new

    y = _contract(update, y, tol, max_iter, 'start layer of order 0', verbose)
    y[:, 0] = _first_normalized(problem, structure, y[:, 1:], y[:, 0], tol)
    dy = np.empty_like(y)
    dy[:, 1:] = y[:, 1:] @ lam.T + _pi0_nonlinearity(problem, structure, y)
    dy[:, 0] = CubicSpline(grid.distance, y[:, 0]).derivative()(grid.distance)
    Q = structure.Q
    return LayerSolution(grid=grid, values=y @ Q.T, slopes=dy @ Q.T, side='start', order=0, parameter=c,
                         normalized=y)


def q0_solve(problem: BVPProblem, structure: PencilStructure, c0p, grid: LayerGrid, tol: float = 1e-12,
             max_iter: int = 200, verbose: bool = False) -> LayerSolution:
    """
    Leading-order end layer by successive approximations of

        R_+(xi) = exp(W_+ xi) c - int_xi^0 exp(W_+ (xi - s)) p_+(s) ds,
        R_-(xi) = int_-inf^xi exp(W_- (xi - s)) p_-(s) ds,

    with Q_0 x = U R.

    :raises ContractionError: if the iteration does not contract or exceeds `max_iter` steps.
    """
    m_plus = structure.p + 1
    c = np.atleast_1d(np.asarray(c0p, dtype=float))
    if c.shape != (m_plus,) or not np.all(np.isfinite(c)):
        raise ValueError(f'c0p must be a finite vector of length {m_plus}, got {c0p}.')
    W = structure.W
    # marching in the distance -xi flips the generators
    plus = _ExponentialSweep(grid.distance, -np.diag(W[:m_plus]))
    minus = _ExponentialSweep(grid.distance, -np.diag(W[m_plus:]))
    nodes = len(grid)

    R = np.zeros((nodes, structure.n))
    R[:, :m_plus] = plus.outward(c, np.zeros((nodes, m_plus)))

    def update(R_old):
        forcing = _q0_nonlinearity(problem, structure, R_old)
        R_new = np.empty_like(R_old)
        R_new[:, :m_plus] = plus.outward(c, -forcing[:, :m_plus])
        R_new[:, m_plus:] = minus.inward(-forcing[:, m_plus:])
        return R_new

    R = _contract(update, R, tol, max_iter, 'end layer of order 0', verbose)
    dR = R * W + _q0_nonlinearity(problem, structure, R)
    U = structure.U
    return LayerSolution(grid=grid, values=R @ U.T, slopes=dR @ U.T, side='end', order=0, parameter=c,
                         normalized=R)


def pi0_residual(problem: BVPProblem, structure: PencilStructure, layer: LayerSolution) -> float:
    """Sup-norm change of one more successive approximation applied to a start layer of order 0."""
    p = structure.p
    y = layer.normalized
    lam = structure.Lambda
    forcing = _pi0_nonlinearity(problem, structure, y)
    plus = _ExponentialSweep(layer.grid.distance, lam[:p, :p]).inward(forcing[:, :p])
    minus = _ExponentialSweep(layer.grid.distance, lam[p:, p:]).outward(layer.parameter, forcing[:, p:])
    x = structure.x0_start + layer.values
    f = problem.f
    algebraic = (f.eval_many(x, 0.0, 0.0) - f.eval(structure.x0_start, 0.0, 0.0)) @ structure.P[0]
    return float(max(np.max(np.abs(plus - y[:, 1:p + 1])), np.max(np.abs(minus - y[:, p + 1:])),
                     np.max(np.abs(algebraic))))


def q0_residual(problem: BVPProblem, structure: PencilStructure, layer: LayerSolution) -> float:
    """Sup-norm change of one more successive approximation applied to an end layer of order 0."""
    m_plus = structure.p + 1
    R = layer.normalized
    W = structure.W
    forcing = _q0_nonlinearity(problem, structure, R)
    plus = _ExponentialSweep(layer.grid.distance, -np.diag(W[:m_plus])).outward(layer.parameter,
                                                                                 -forcing[:, :m_plus])
    minus = _ExponentialSweep(layer.grid.distance, -np.diag(W[m_plus:])).inward(-forcing[:, m_plus:])
    return float(max(np.max(np.abs(plus - R[:, :m_plus])), np.max(np.abs(minus - R[:, m_plus:]))))


class Propagator:
    """
    Variational system z' = G(s) z of a leading-order layer in stretched time s.

    On the start side z are the differential coordinates y_2 of Pi = Q y, with the algebraic row eliminated:
    G = C_4 - C_3 C_2 / C_1 for C = P f_x(x0 + Pi_0) Q. On the end side z = R of Q = U R and
    G = U^{-1} A(T,0)^{-1} f_x(x0 + Q_0) U. The plus block (leading components) is integrated only toward
    decreasing s, the minus block only toward increasing s.
    """

    def __init__(self, problem: BVPProblem, structure: PencilStructure, side: Side, leading: LayerSolution,
                 rtol: float = 1e-11, atol: float = 1e-14):
        self.side = side
        self.grid = leading.grid
        self.rtol = rtol
        self.atol = atol
        self._leading = leading
        self._f = problem.f
        if side == 'start':
            self._t, self._x0 = 0.0, structure.x0_start
            self._left, self._right = structure.P, structure.Q
            self.dim, self.m_plus = structure.n - 1, structure.p
        else:
            self._t, self._x0 = problem.T, structure.x0_end
            self._left, self._right = _end_map(structure), structure.U
            self.dim, self.m_plus = structure.n, structure.p + 1

    def block(self, which: Block) -> slice:
        return slice(0, self.m_plus) if which == 'plus' else slice(self.m_plus, self.dim)

    def raw(self, s: float) -> np.ndarray:
        x = self._x0 + self._leading.eval(s)
        return self._left @ self._f.jac(x, self._t, 0.0) @ self._right

    @cached_property
    def raw_nodes(self) -> np.ndarray:
        jacs = self._f.jac_many(self._x0 + self._leading.values, self._t, 0.0)
        return self._left @ jacs @ self._right

    def reduce(self, C: np.ndarray) -> np.ndarray:
        """Generator G from the raw coefficient matrix (single or stacked along the first axis)."""
        if self.side == 'end':
            return C
        return C[..., 1:, 1:] - C[..., 1:, :1] * C[..., None, 0, 1:] / C[..., None, None, 0, 0]

    def reduce_forcing(self, C: np.ndarray, r: np.ndarray) -> np.ndarray:
        """Forcing of the differential coordinates from a forcing r in original coordinates."""
        rho = r @ self._left.T
        if self.side == 'end':
            return rho
        return rho[..., 1:] - C[..., 1:, 0] * (rho[..., 0] / C[..., 0, 0])[..., None]

    def generator(self, s: float) -> np.ndarray:
        return self.reduce(self.raw(s))

    @cached_property
    def generator_nodes(self) -> np.ndarray:
        return self.reduce(self.raw_nodes)

    def _check_direction(self, which: Block, s: float, t: float):
        if (which == 'plus' and t > s) or (which == 'minus' and t < s):
            raise ValueError(f'The {which} block cannot be integrated from {s:.6g} to {t:.6g}; '
                             'only its stable direction is allowed.')

    def apply(self, which: Block, s: float, t: float, v: np.ndarray) -> np.ndarray:
        """
        Homogeneous block solution at t with value v at s. The vector is renormalized at every grid node
        crossed so that growth or decay never over- or underflows.

        :raises ValueError: if s -> t is the unstable direction of the block.
        :raises StiffnessError: if the adaptive integrator fails.
        """
        v = np.asarray(v, dtype=float).copy()
        if s == t:
            return v
        self._check_direction(which, s, t)
        sl = self.block(which)
        lo, hi = min(s, t), max(s, t)
        inner = self.grid.nodes[(self.grid.nodes > lo) & (self.grid.nodes < hi)]
        inner = np.sort(inner) if t > s else -np.sort(-inner)
        points = np.r_[s, inner, t]
        z, log_scale = v, 0.0
        for a, b in zip(points[:-1], points[1:]):
            sol = solve_ivp(lambda u, w: self.generator(u)[sl, sl] @ w, (a, b), z, method='RK45',
                            rtol=self.rtol, atol=self.atol)
            if not sol.success:
                raise StiffnessError(f'Propagator failed between {a:.6g} and {b:.6g}: {sol.message}')
            z = sol.y[:, -1]
            norm = np.linalg.norm(z)
            if norm == 0.0:
                return np.zeros_like(v)
            z = z / norm
            log_scale += np.log(norm)
        return z * np.exp(log_scale)

    def transport(self, which: Block, z0: np.ndarray, rhs: Callable[[float, np.ndarray], np.ndarray],
                  from_anchor: bool) -> np.ndarray:
        """
        Solve z_b' = rhs(s, z_b) over the whole grid, starting at the anchor or at the far end.

        :return: block values at the grid nodes, in grid order.
        :raises StiffnessError: if the adaptive integrator fails.
        """
        nodes = self.grid.nodes if from_anchor else self.grid.nodes[::-1]
        self._check_direction(which, nodes[0], nodes[-1])
        sol = solve_ivp(rhs, (nodes[0], nodes[-1]), np.asarray(z0, dtype=float), method='RK45', t_eval=nodes,
                        rtol=self.rtol, atol=self.atol)
        if not sol.success or sol.y.shape[1] != len(nodes):
            raise StiffnessError(f'Layer integration of the {which} block failed: {sol.message}')
        out = sol.y.T
        return out if from_anchor else out[::-1]


def propagator(problem: BVPProblem, structure: PencilStructure, which: Side, pi0_or_q0: LayerSolution,
               rtol: float = 1e-11, atol: float = 1e-14) -> Propagator:
    if pi0_or_q0.side != which:
        raise ValueError(f'A {pi0_or_q0.side} layer cannot define the {which} propagator.')
    return Propagator(problem, structure, which, pi0_or_q0, rtol=rtol, atol=atol)


@dataclass
class LayerInputs:
    """Everything a higher-order layer of one side depends on: the regular series and the lower layers."""
    side: Side
    regular: SeriesField
    layers: list[LayerSolution]
    propagator: Propagator
    max_iter: int = 200

    @property
    def grid(self) -> LayerGrid:
        return self.propagator.grid


def layer_inputs(problem: BVPProblem, structure: PencilStructure, side: Side, regular: SeriesField,
                 layers: list[LayerSolution], rtol: float = 1e-11, atol: float = 1e-14,
                 max_iter: int = 200) -> LayerInputs:
    prop = propagator(problem, structure, side, layers[0], rtol=rtol, atol=atol)
    return LayerInputs(side=side, regular=regular, layers=list(layers), propagator=prop, max_iter=max_iter)


def _layer_forcing(problem: BVPProblem, inputs: LayerInputs, k: int) -> np.ndarray:
    """
    Forcing of the order-k layer equation A_0 L_k' = f_x L_k + r_k at the grid nodes:

        r_k = g_k - sum_{i=1..k} [eps^i] A(anchor + eps s, eps) L'_{k-i},

    where g_k is the eps^k coefficient of f(xbar + L) - f(xbar) along t = anchor + eps s with L_k = 0 and
    xbar(anchor + eps s, eps) re-expanded in eps.
    """
    if k < 1 or len(inputs.layers) < k:
        raise ValueError(f'Order {k} needs layers of orders 0..{k - 1}, got {len(inputs.layers)}.')
    series = inputs.regular
    if series.order < k:
        raise ValueError(f'Regular series filled through order {series.order}, order {k} required.')
    anchor = 0.0 if inputs.side == 'start' else problem.T
    s = inputs.grid.nodes
    n, size = problem.n, len(s)

    xbar = []
    for m in range(k + 1):
        acc = np.zeros((n, size))
        for j in range(m + 1):
            r = m - j
            d = series.eval(j, anchor) if r == 0 else series.deriv(j, anchor, r)
            acc += np.outer(d, s ** r / factorial(r))
        xbar.append(acc)
    xbar = Jet(np.stack(xbar))
    layer = Jet(np.stack([lay.values.T for lay in inputs.layers[:k]] + [np.zeros((n, size))]))
    t = Jet(np.stack([np.full(size, anchor), s] + [np.zeros(size)] * (k - 1)))
    f = problem.f
    r = (f.eval_jet(xbar + layer, t, k).coeff(k) - f.eval_jet(xbar, t, k).coeff(k)).T
    for i in range(1, k + 1):
        Ai = np.array([problem.A.layer_coeff(anchor, float(si), i) for si in s])
        r = r - np.einsum('pij,pj->pi', Ai, inputs.layers[k - i].slopes)
    return r


def pi_forcing(problem: BVPProblem, inputs: LayerInputs, k: int) -> np.ndarray:
    if inputs.side != 'start':
        raise ValueError('pi_forcing needs start-side inputs.')
    return _layer_forcing(problem, inputs, k)


def q_forcing(problem: BVPProblem, inputs: LayerInputs, k: int) -> np.ndarray:
    if inputs.side != 'end':
        raise ValueError('q_forcing needs end-side inputs.')
    return _layer_forcing(problem, inputs, k)


def _split_linear_solve(prop: Propagator, r_fn: Callable[[float], np.ndarray], anchor_value: np.ndarray,
                        tol: float, max_iter: int) -> np.ndarray:
    """
    Decaying solution of z' = G z + v split into its plus and minus blocks, each integrated in its stable
    direction. The anchored block (minus at tau=0, plus at xi=0) starts from `anchor_value`, the other one from
    zero at the far end. Block coupling is resolved by Gauss-Seidel sweeps.
    """
    grid = prop.grid
    anchored: Block = 'minus' if prop.side == 'start' else 'plus'
    free: Block = 'plus' if anchored == 'minus' else 'minus'
    other_of = {'plus': 'minus', 'minus': 'plus'}
    G = prop.generator_nodes
    ps, ms = prop.block('plus'), prop.block('minus')
    coupling = max(np.max(np.abs(G[:, ps, ms]), initial=0.0), np.max(np.abs(G[:, ms, ps]), initial=0.0))
    coupled = coupling > 1e-14

    z = np.zeros((len(grid), prop.dim))
    for it in range(1, max_iter + 1):
        previous = z.copy()
        for which in (anchored, free):
            sl, ol = prop.block(which), prop.block(other_of[which])
            other = CubicSpline(grid.distance, z[:, ol], axis=0) if coupled else None

            def rhs(s, zb, sl=sl, ol=ol, other=other):
                C = prop.raw(s)
                Gs = prop.reduce(C)
                out = Gs[sl, sl] @ zb + prop.reduce_forcing(C, r_fn(s))[sl]
                if other is not None:
                    out = out + Gs[sl, ol] @ other(abs(s))
                return out

            start = anchor_value if which == anchored else np.zeros(sl.stop - sl.start)
            z[:, sl] = prop.transport(which, start, rhs, from_anchor=which == anchored)
        change = float(np.max(np.abs(z - previous), initial=0.0))
        if not coupled or change <= tol:
            return z
    raise ContractionError(f'Block sweeps of the {prop.side} layer did not converge in {max_iter} iterations '
                           f'(last change {change:.3e})', iterations=max_iter)


def _linear_layer(problem: BVPProblem, structure: PencilStructure, k: int, param: np.ndarray,
                  inputs: LayerInputs, forcing, tol: float) -> LayerSolution:
    prop = inputs.propagator
    grid = prop.grid
    C = prop.raw_nodes
    if prop.side == 'start':
        c1 = np.abs(C[:, 0, 0])
        if np.any(c1 < 1e-10):
            bad = int(np.argmax(c1 < 1e-10))
            raise TurningDegeneracyError(f'C_1 vanishes at tau={grid.nodes[bad]:.6g} ({c1[bad]:.3e}).')
    if callable(forcing):
        r_fn = forcing
        r_nodes = np.array([forcing(s) for s in grid.nodes])
    else:
        r_nodes = np.asarray(forcing, dtype=float)
        spline = CubicSpline(grid.distance, r_nodes, axis=0)

        def r_fn(s):
            return spline(abs(s))

    z = _split_linear_solve(prop, r_fn, param, tol, inputs.max_iter)
    dz = np.einsum('pij,pj->pi', prop.generator_nodes, z) + prop.reduce_forcing(C, r_nodes)
    if prop.side == 'start':
        rho = r_nodes @ structure.P.T
        y1 = -(np.einsum('pj,pj->p', C[:, 0, 1:], z) + rho[:, 0]) / C[:, 0, 0]
        dy1 = CubicSpline(grid.distance, y1).derivative()(grid.distance)
        y, dy = np.column_stack([y1, z]), np.column_stack([dy1, dz])
        right = structure.Q
    else:
        y, dy = z, dz
        right = structure.U
    return LayerSolution(grid=grid, values=y @ right.T, slopes=dy @ right.T, side=prop.side, order=k,
                         parameter=param, normalized=y)


def pik_solve(problem: BVPProblem, structure: PencilStructure, k: int, a_km, inputs: LayerInputs,
              tol: float = 1e-12, forcing=None) -> LayerSolution:
    """
    Start layer of order k >= 1 with minus-block anchor value a_km.

    :param forcing: precomputed r_k at the nodes, or a callable tau -> r_k(tau); assembled from `inputs`
                    when omitted.
    :raises TurningDegeneracyError: if C_1 = [P f_x Q]_11 nearly vanishes at a node.
    """
    if inputs.side != 'start':
        raise ValueError('pik_solve needs start-side inputs.')
    a = np.atleast_1d(np.asarray(a_km, dtype=float))
    if a.shape != (structure.q,):
        raise ValueError(f'a_km must have length {structure.q}, got {a_km}.')
    if forcing is None:
        forcing = pi_forcing(problem, inputs, k)
    return _linear_layer(problem, structure, k, a, inputs, forcing, tol)


def qk_solve(problem: BVPProblem, structure: PencilStructure, k: int, b_kp, inputs: LayerInputs,
             tol: float = 1e-12, forcing=None) -> LayerSolution:
    """
    End layer of order k >= 1 with plus-block anchor value b_kp; mirror of :func:`pik_solve`.
    """
    if inputs.side != 'end':
        raise ValueError('qk_solve needs end-side inputs.')
    b = np.atleast_1d(np.asarray(b_kp, dtype=float))
    if b.shape != (structure.p + 1,):
        raise ValueError(f'b_kp must have length {structure.p + 1}, got {b_kp}.')
    if forcing is None:
        forcing = q_forcing(problem, inputs, k)
    return _linear_layer(problem, structure, k, b, inputs, forcing, tol)
