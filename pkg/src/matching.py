"""
Matching constants of the layer terms, determined by the boundary condition split order by order:

    M (xbar_k(0) + Pi_k x(0)) + N (xbar_k(T) + Q_k x(0)) = d_k.

The unknowns are stacked as (c_+, c_2-): the plus-block anchor of the end layer followed by the minus-block anchor
of the start layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from pandas import DataFrame

from src.config import SolverSettings
from src.errors import MatchingError, MatchingStructureError, SolverFailure
from src.layers import LayerInputs, LayerSolution, layer_grid, pi0_solve, pi_forcing, pik_solve, q0_solve, \
    q_forcing, qk_solve
from src.pencil import PencilStructure
from src.problem import BVPProblem
from src.regular import SeriesField
from src.rootfind import damped_newton
from src.util import log_message, save_frame


@dataclass(frozen=True)
class MatchingSystem:
    """
    D multiplies the anchored layer constants in the boundary condition, D_1 the layer components they do not
    fix directly (first normalized component and plus block of the start layer, minus block of the end layer).
    """
    D: np.ndarray
    D1: np.ndarray
    K: np.ndarray
    cond: float
    D_inverse_norm: float
    contraction_bound: float
    block_sizes: tuple[int, int, int]


def matching_system(problem: BVPProblem, structure: PencilStructure) -> MatchingSystem:
    """
    :raises MatchingStructureError: if D is singular (condition number above 1e12).
    """
    M, N = problem.bc.M, problem.bc.N
    m_plus = structure.p + 1
    K = N @ structure.U
    MQ = M @ structure.Q
    D = np.column_stack([K[:, :m_plus], MQ[:, m_plus:]])
    D1 = np.column_stack([MQ[:, :m_plus], K[:, m_plus:]])
    cond = float(np.linalg.cond(D))
    if not np.isfinite(cond) or cond > 1e12:
        raise MatchingStructureError(f'Matching matrix D is singular (cond {cond:.3e}).')
    D_inv = np.linalg.inv(D)
    return MatchingSystem(D=D, D1=D1, K=K, cond=cond, D_inverse_norm=float(np.linalg.norm(D_inv, 2)),
                          contraction_bound=float(np.linalg.norm(D_inv @ D1, 2)),
                          block_sizes=(1, structure.p, structure.q))


@dataclass(frozen=True)
class HigherConstants:
    a_km: np.ndarray
    b_kp: np.ndarray
    residual: float

    @property
    def c_k2m(self) -> np.ndarray:
        return self.a_km

    @property
    def c_kp(self) -> np.ndarray:
        return self.b_kp


@dataclass
class MatchConstants:
    c02m: np.ndarray
    c0p: np.ndarray
    residual: float
    path: str
    iterations: int
    ratios: list[float] = field(default_factory=list)
    higher: dict[int, HigherConstants] = field(default_factory=dict)

    def to_frame(self) -> DataFrame:
        rows = {'order': [], 'name': [], 'component': [], 'value': []}

        def add(order, name, values):
            for i, v in enumerate(values):
                rows['order'].append(order)
                rows['name'].append(name)
                rows['component'].append(i)
                rows['value'].append(float(v))

        add(0, 'c0p', self.c0p)
        add(0, 'c02m', self.c02m)
        for k in sorted(self.higher):
            add(k, 'b_kp', self.higher[k].b_kp)
            add(k, 'a_km', self.higher[k].a_km)
        return DataFrame(rows)

    def to_csv(self, save_dir: str | None, name: str = 'constants') -> str:
        return save_frame(self.to_frame(), save_dir, name)


@dataclass
class OrderMatch:
    """Constants of one order together with the layers they produce."""
    order: int
    pi: LayerSolution
    q: LayerSolution
    constants: MatchConstants | HigherConstants


def _boundary_residual(problem: BVPProblem, regular: SeriesField, k: int, pi: LayerSolution,
                       q: LayerSolution) -> np.ndarray:
    bc = problem.bc
    x_start = regular.values(k)[0] + pi.anchor_value
    x_end = regular.values(k)[-1] + q.anchor_value
    return bc.M @ x_start + bc.N @ x_end - bc.d_coeff(k)


def solve_c0(problem: BVPProblem, structure: PencilStructure, regular: SeriesField,
             settings: SolverSettings | None = None, tol: float | None = None) -> OrderMatch:
    """
    Leading-order constants by the fixed point c <- c - theta D^{-1} (D c - phi(c)), whose residual
    D c - phi(c) is the boundary residual of the order-0 terms. Falls back to Newton with a finite-difference
    Jacobian when the iterate-difference ratio exceeds ``newton_switch_ratio``.

    :raises MatchingStructureError: if D is singular.
    :raises MatchingError: if neither iteration converges.
    """
    settings = settings or SolverSettings()
    tol = settings.match_tol if tol is None else tol
    system = matching_system(problem, structure)
    m_plus = structure.p + 1
    grid_start = layer_grid(structure, 'start', settings.layer_nodes, settings.grading, settings.tau_max)
    grid_end = layer_grid(structure, 'end', settings.layer_nodes, settings.grading, settings.tau_max)
    cache: dict[bytes, tuple[LayerSolution, LayerSolution]] = {}

    def layers(c):
        key = np.asarray(c, dtype=float).tobytes()
        if key not in cache:
            pi = pi0_solve(problem, structure, c[m_plus:], grid_start, tol=settings.tol,
                           max_iter=settings.fixed_point_max_iter)
            q = q0_solve(problem, structure, c[:m_plus], grid_end, tol=settings.tol,
                         max_iter=settings.fixed_point_max_iter)
            cache[key] = (pi, q)
        return cache[key]

    def residual(c):
        return _boundary_residual(problem, regular, 0, *layers(c))

    bc = problem.bc
    base = bc.d_coeff(0) - bc.M @ regular.values(0)[0] - bc.N @ regular.values(0)[-1]
    c = np.linalg.solve(system.D, base)
    ratios: list[float] = []
    previous_step = None
    path = 'fixed_point'
    iterations = 0
    res = residual(c)
    while np.max(np.abs(res)) > tol:
        if iterations >= settings.match_max_iter:
            path = 'newton'
            break
        step = settings.fixed_point_damping * np.linalg.solve(system.D, res)
        step_norm = float(np.max(np.abs(step)))
        c = c - step
        iterations += 1
        if previous_step:
            ratios.append(step_norm / previous_step)
            if ratios[-1] > settings.newton_switch_ratio:
                path = 'newton'
                break
        previous_step = step_norm
        res = residual(c)
    if path == 'newton':
        if settings.verbose:
            log_message('BoundaryMatch', f'fixed point stalled after {iterations} steps, switching to Newton')

        def jac(x):
            r0 = residual(x)
            cols = []
            for j in range(len(x)):
                h = 1e-7 * max(1.0, abs(x[j]))
                xh = x.copy()
                xh[j] += h
                cols.append((residual(xh) - r0) / h)
            return np.column_stack(cols)

        try:
            result = damped_newton(residual, c, jac, tol=tol, it_max=settings.match_max_iter, cond_limit=1e12)
        except SolverFailure as e:
            raise MatchingError(f'Order-0 matching failed: {e}', residual=float(np.max(np.abs(residual(c))))) \
                from e
        c = result.x
        iterations += result.iterations
        res = residual(c)
    pi, q = layers(c)
    if settings.verbose:
        log_message('BoundaryMatch', f'order 0 matched by {path} in {iterations} steps, '
                                     f'residual {np.max(np.abs(res)):.3e}')
    constants = MatchConstants(c02m=c[m_plus:], c0p=c[:m_plus], residual=float(np.max(np.abs(res))), path=path,
                               iterations=iterations, ratios=ratios)
    return OrderMatch(order=0, pi=pi, q=q, constants=constants)


def _superpose(zero: LayerSolution, basis: list[LayerSolution], weights: np.ndarray,
               parameter: np.ndarray) -> LayerSolution:
    values, slopes, normalized = zero.values.copy(), zero.slopes.copy(), zero.normalized.copy()
    for w, b in zip(weights, basis):
        values += w * (b.values - zero.values)
        slopes += w * (b.slopes - zero.slopes)
        normalized += w * (b.normalized - zero.normalized)
    return LayerSolution(grid=zero.grid, values=values, slopes=slopes, side=zero.side, order=zero.order,
                         parameter=parameter, normalized=normalized)


def solve_ck(problem: BVPProblem, structure: PencilStructure, k: int, start: LayerInputs, end: LayerInputs,
             tol: float = 1e-12) -> OrderMatch:
    """
    Constants (a_k-, b_k+) of order k >= 1. The boundary residual is affine in them; the map is assembled from
    one particular solve per side plus one solve per basis vector, and the final layers follow by superposition.

    :raises MatchingError: if the assembled matrix is singular (cond > 1e12).
    """
    m_plus, q_dim = structure.p + 1, structure.q
    regular = start.regular
    r_start = pi_forcing(problem, start, k)
    r_end = q_forcing(problem, end, k)
    M, N = problem.bc.M, problem.bc.N

    pi_zero = pik_solve(problem, structure, k, np.zeros(q_dim), start, tol=tol, forcing=r_start)
    q_zero = qk_solve(problem, structure, k, np.zeros(m_plus), end, tol=tol, forcing=r_end)
    pi_basis = [pik_solve(problem, structure, k, e, start, tol=tol, forcing=r_start) for e in np.eye(q_dim)]
    q_basis = [qk_solve(problem, structure, k, e, end, tol=tol, forcing=r_end) for e in np.eye(m_plus)]

    columns = [N @ (b.anchor_value - q_zero.anchor_value) for b in q_basis]
    columns += [M @ (b.anchor_value - pi_zero.anchor_value) for b in pi_basis]
    G = np.column_stack(columns)
    cond = float(np.linalg.cond(G))
    rhs = -_boundary_residual(problem, regular, k, pi_zero, q_zero)
    if not np.isfinite(cond) or cond > 1e12:
        raise MatchingError(f'Order-{k} matching matrix is singular (cond {cond:.3e}).',
                            residual=float(np.max(np.abs(rhs))))
    sol = np.linalg.solve(G, rhs)
    b, a = sol[:m_plus], sol[m_plus:]
    pi = _superpose(pi_zero, pi_basis, a, a)
    q = _superpose(q_zero, q_basis, b, b)
    residual = float(np.max(np.abs(_boundary_residual(problem, regular, k, pi, q))))
    return OrderMatch(order=k, pi=pi, q=q, constants=HigherConstants(a_km=a, b_kp=b, residual=residual))
