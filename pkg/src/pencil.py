"""
Matrix pencil analysis at the turning point t=0 and along (0, T].

At t=0 the pencil f_x - eta A(0, 0) has one infinite elementary divisor and two finite eigenvalues eta1 > 0
(multiplicity p) and eta2 < 0 (multiplicity q). The normalizers P, Q bring it to

    P A(0,0) Q = diag(0, I),   P f_x Q = diag(1, Lambda_plus, Lambda_minus).

At t=T the matrix A^{-1} f_x is diagonalized by U with eigenvalues W sorted by descending real part.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg as la
from pandas import DataFrame
from scipy.optimize import linear_sum_assignment

from src.errors import StructureError
from src.problem import BVPProblem
from src.regular import SeriesField
from src.util import log_message, save_frame


class Verdict(str, Enum):
    PASS = 'pass'
    FAIL = 'fail'
    UNTESTABLE = 'untestable'


@dataclass(frozen=True)
class PencilSpectrum:
    finite: np.ndarray
    infinite_count: int
    t: float | None = None


@dataclass(frozen=True)
class PencilStructure:
    n: int
    p: int
    q: int
    eta1: float
    eta2: float
    P: np.ndarray
    Q: np.ndarray
    Omega: np.ndarray
    U: np.ndarray
    W: np.ndarray
    A_T: np.ndarray
    x0_start: np.ndarray
    x0_end: np.ndarray
    alpha_star: float
    beta_star: float

    @property
    def Lambda(self) -> np.ndarray:
        """diag(Lambda_plus, Lambda_minus), the finite part of Omega."""
        return self.Omega[1:, 1:]

    @property
    def Lambda_plus(self) -> np.ndarray:
        return self.Omega[1:self.p + 1, 1:self.p + 1]

    @property
    def Lambda_minus(self) -> np.ndarray:
        return self.Omega[self.p + 1:, self.p + 1:]

    @property
    def U_inv(self) -> np.ndarray:
        return np.linalg.inv(self.U)


@dataclass(frozen=True)
class ConditionCheck:
    name: str
    verdict: Verdict
    witness_t: float | None
    witness_value: float | None
    detail: str = ''


@dataclass
class StructureReport:
    checks: list[ConditionCheck]
    grid: np.ndarray
    p: int | None = None
    q: int | None = None
    eta1: float | None = None
    eta2: float | None = None
    paths: np.ndarray | None = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return all(c.verdict == Verdict.PASS for c in self.checks)

    def failed(self) -> list[ConditionCheck]:
        return [c for c in self.checks if c.verdict != Verdict.PASS]

    def check(self, name: str) -> ConditionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_text(self) -> str:
        lines = [f'Pencil structure on {len(self.grid)} points of [{self.grid[0]:.3g}, {self.grid[-1]:.3g}]']
        if self.p is not None:
            lines.append(f'p={self.p} q={self.q} eta1={self.eta1:.12g} eta2={self.eta2:.12g}')
        for c in self.checks:
            t = '-' if c.witness_t is None else f'{c.witness_t:.6g}'
            v = '-' if c.witness_value is None else f'{c.witness_value:.6g}'
            lines.append(f'{c.name:<34} {c.verdict.value:<10} t={t:<12} witness={v:<14} {c.detail}')
        return '\n'.join(lines)

    def to_frame(self) -> DataFrame:
        return DataFrame({
            'name': [c.name for c in self.checks],
            'verdict': [c.verdict.value for c in self.checks],
            'witness_t': [np.nan if c.witness_t is None else c.witness_t for c in self.checks],
            'witness_value': [np.nan if c.witness_value is None else c.witness_value for c in self.checks],
        })

    def to_csv(self, save_dir: str | None, name: str = 'structure') -> str:
        return save_frame(self.to_frame(), save_dir, name)


def _normalize_columns(V: np.ndarray) -> np.ndarray:
    """Unit Euclidean length, first non-negligible entry positive."""
    V = np.array(V, dtype=complex if np.iscomplexobj(V) else float)
    for j in range(V.shape[1]):
        col = V[:, j] / np.linalg.norm(V[:, j])
        lead = col[np.argmax(np.abs(col) > 1e-12)]
        col = col * (abs(lead) / lead)
        V[:, j] = col
    return V


def _real_if_close(x, tol: float = 1e-10):
    x = np.asarray(x)
    if np.iscomplexobj(x) and np.all(np.abs(x.imag) <= tol * np.maximum(1.0, np.abs(x))):
        return x.real
    return x


def pencil_spectrum(J: np.ndarray, A: np.ndarray, tol: float = 1e-10, t: float | None = None) -> PencilSpectrum:
    """
    Roots of det(J - w A) = 0 plus the multiplicity of the infinite eigenvalue.

    :raises StructureError: if the pencil is singular (det(J - w A) vanishes identically).
    """
    J = np.asarray(J, dtype=float)
    A = np.asarray(A, dtype=float)
    n = J.shape[0]
    scale = max(1.0, np.linalg.norm(J, 2), np.linalg.norm(A, 2))
    probes = (0.37, -1.3, 2.1 + 0.7j)
    if all(abs(np.linalg.det(J - w * A)) <= tol * (scale * (1 + abs(w))) ** n for w in probes):
        raise StructureError('Singular pencil: det(J - wA) vanishes identically.')
    ab = la.eig(J, A, right=False, homogeneous_eigvals=True)
    alpha, beta = ab[0], ab[1]
    nrm = np.sqrt(np.abs(alpha) ** 2 + np.abs(beta) ** 2)
    alpha, beta = alpha / nrm, beta / nrm
    infinite = np.abs(beta) < tol
    finite = alpha[~infinite] / beta[~infinite]
    finite = _real_if_close(finite[np.argsort(-finite.real, kind='stable')])
    return PencilSpectrum(finite=finite, infinite_count=int(infinite.sum()), t=t)


def _jordan_basis(A0: np.ndarray, J0: np.ndarray, eta: float, m: int, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Right vectors X with J0 X = A0 X Lambda, Lambda = eta I_m + N_m, for one finite eigenvalue of the pencil.
    Semisimple eigenvalues give N_m = 0; a single Jordan chain is built by staircase deflation.
    """
    K = J0 - eta * A0
    kernel = la.null_space(K, rcond=tol)
    g = kernel.shape[1]
    if g == m:
        return _normalize_columns(kernel), eta * np.eye(m)
    if g != 1:
        raise StructureError(
            f'Eigenvalue {eta:.6g} has geometric multiplicity {g} and algebraic multiplicity {m}; '
            'only semisimple eigenvalues or a single Jordan chain are supported.')
    chain = [_normalize_columns(kernel)[:, 0]]
    for _ in range(m - 1):
        rhs = A0 @ chain[-1]
        x, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        if np.linalg.norm(K @ x - rhs) > tol * max(1.0, np.linalg.norm(rhs)):
            raise StructureError(f'Jordan chain for eigenvalue {eta:.6g} breaks off before length {m}.')
        chain.append(x)
    lam = eta * np.eye(m) + np.diag(np.ones(m - 1), 1)
    return np.column_stack(chain), lam


def weierstrass_normalize(
        A0: np.ndarray, J0: np.ndarray, p: int, q: int, tol: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """
    Nonsingular P, Q with P A0 Q = diag(0, I_{n-1}) and P J0 Q = diag(1, Lambda_plus, Lambda_minus).

    :raises StructureError: if the pencil does not have exactly one simple infinite divisor plus finite
                            divisors of the declared multiplicities p, q.
    """
    A0 = np.asarray(A0, dtype=float)
    J0 = np.asarray(J0, dtype=float)
    n = A0.shape[0]
    if p + q != n - 1:
        raise StructureError(f'p + q = {p + q} must equal n - 1 = {n - 1}.')
    kernel = la.null_space(A0, rcond=1e-10)
    if kernel.shape[1] == 0:
        raise StructureError('A(0,0) is nonsingular: the pencil has no infinite elementary divisor.')
    if kernel.shape[1] > 1:
        raise StructureError(f'A(0,0) has a {kernel.shape[1]}-dimensional kernel: '
                             f'{kernel.shape[1]} infinite divisors instead of one.')
    v0 = _normalize_columns(kernel)[:, 0]
    spectrum = pencil_spectrum(J0, A0)
    finite = np.real(spectrum.finite)
    plus, minus = finite[finite > 0], finite[finite < 0]
    if spectrum.infinite_count != 1 or len(plus) != p or len(minus) != q:
        raise StructureError(
            f'Divisor structure mismatch: {spectrum.infinite_count} infinite, {len(plus)} positive and '
            f'{len(minus)} negative finite eigenvalues; expected 1, {p}, {q}.')
    X_plus, lam_plus = _jordan_basis(A0, J0, float(plus.mean()), p, tol)
    X_minus, lam_minus = _jordan_basis(A0, J0, float(minus.mean()), q, tol)
    Q = np.column_stack([v0, X_plus, X_minus])
    S = np.column_stack([J0 @ v0, A0 @ X_plus, A0 @ X_minus])
    if np.linalg.cond(S) > 1e12:
        raise StructureError('The infinite divisor is not simple: [J0 v0, A0 X] is singular.')
    P = np.linalg.inv(S)
    H = np.diag(np.r_[0.0, np.ones(n - 1)])
    Omega = la.block_diag(np.eye(1), lam_plus, lam_minus)
    scale = max(1.0, np.linalg.norm(J0, 2))
    if np.max(np.abs(P @ A0 @ Q - H)) > 1e-9 * scale or np.max(np.abs(P @ J0 @ Q - Omega)) > 1e-9 * scale:
        raise StructureError('Normal form could not be reached to 1e-9; the pencil is ill-conditioned.')
    return P, Q


def diagonalize_at_T(A_T: np.ndarray, J_T: np.ndarray, gap_tol: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """
    Eigen-decomposition U^{-1} A_T^{-1} J_T U = diag(W) with W sorted by descending real part.

    :raises StructureError: if A_T is singular, the spectrum is complex or two eigenvalues are too close.
    """
    A_T = np.asarray(A_T, dtype=float)
    if np.linalg.cond(A_T) > 1e12:
        raise StructureError('A(T,0) is singular.')
    F = np.linalg.solve(A_T, np.asarray(J_T, dtype=float))
    w, V = la.eig(F)
    if np.any(np.abs(w.imag) > 1e-10 * np.maximum(1.0, np.abs(w))):
        raise StructureError(f'A(T,0)^-1 f_x has complex eigenvalues {w}; a real spectrum is required.')
    w, V = w.real, V.real
    order = np.argsort(-w, kind='stable')
    w, V = w[order], V[:, order]
    gaps = np.abs(np.diff(w))
    if len(gaps) and gaps.min() < gap_tol * max(1.0, np.abs(w).max()):
        raise StructureError(f'Eigenvalues of A(T,0)^-1 f_x are not distinct (gap {gaps.min():.3e}).')
    U = _normalize_columns(V)
    if np.max(np.abs(np.linalg.solve(U, F @ U) - np.diag(w))) > 1e-9 * max(1.0, np.abs(w).max()):
        raise StructureError('Diagonalization at t=T is ill-conditioned.')
    return U, w


def _structure_grid(t_floor: float, T: float, size: int) -> np.ndarray:
    j = np.arange(size)
    return t_floor + (T - t_floor) / 2 * (1 - np.cos(np.pi * j / (size - 1)))


def _track_paths(grid: np.ndarray, matrices: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """
    Eigenvalue paths w_i(t) of J(t) - w A(t), continued from point to point by maximal eigenvector overlap.
    """
    paths = []
    prev_vecs = None
    for J, A in matrices:
        w, V = la.eig(J, A)
        V = V / np.linalg.norm(V, axis=0)
        if prev_vecs is None:
            order = np.argsort(-w.real, kind='stable')
        else:
            overlap = np.abs(prev_vecs.conj().T @ V)
            _, order = linear_sum_assignment(-overlap)
        paths.append(w[order])
        prev_vecs = V[:, order]
    return np.array(paths)


def _first_crossing(grid: np.ndarray, paths: np.ndarray) -> tuple[float, int, int] | None:
    n = paths.shape[1]
    for g in range(len(grid) - 1):
        for i in range(n):
            for j in range(i + 1, n):
                da = (paths[g, i] - paths[g, j]).real
                db = (paths[g + 1, i] - paths[g + 1, j]).real
                if da * db < 0 or (da == 0 and db != 0):
                    t = grid[g] + (grid[g + 1] - grid[g]) * da / (da - db)
                    return float(t), i, j
    return None


def classify_and_verify(
        problem: BVPProblem,
        reduced: SeriesField,
        t_floor: float = 1e-3,
        grid_size: int = 32,
        tol: float = 1e-10,
        verbose: bool = False) -> tuple[PencilStructure | None, StructureReport]:
    """
    Classify the pencil at t=0 and verify the structural conditions on [t_floor, T].

    The structure is None when the turning-point conditions at t=0 (vanishing det A(0,0), divisor structure,
    signs of eta1, eta2) fail; the report lists all verdicts in any case.

    :raises StructureError: if the normalizers cannot be computed although the t=0 conditions hold.
    """
    n, T = problem.n, problem.T
    f, A = problem.f, problem.A
    checks: list[ConditionCheck] = []

    # isolated root: f_x nonsingular along the reduced solution
    jacs = f.jac_many(reduced.values(0), reduced.grid, 0.0)
    sigma = np.array([np.linalg.svd(Jt, compute_uv=False)[-1] for Jt in jacs])
    worst = int(np.argmin(sigma))
    checks.append(ConditionCheck(
        'isolated_reduced_root',
        Verdict.PASS if sigma[worst] > 1e-10 * max(1.0, np.abs(jacs[worst]).max()) else Verdict.FAIL,
        float(reduced.grid[worst]), float(sigma[worst]), 'smallest singular value of f_x'))

    # turning point at t=0
    x0_start = reduced.values(0)[0]
    J0 = jacs[0]
    A0 = A.value(0.0, 0.0)
    det0 = abs(np.linalg.det(A0))
    has_turning = det0 <= tol * max(1.0, np.linalg.norm(A0, 2)) ** n
    checks.append(ConditionCheck('turning_point_pencil', Verdict.PASS if has_turning else Verdict.FAIL,
                                 0.0, float(det0), '|det A(0,0)|'))

    p = q = None
    eta1 = eta2 = None
    try:
        spectrum = pencil_spectrum(J0, A0, tol=tol, t=0.0)
    except StructureError as e:
        spectrum = None
        checks.append(ConditionCheck('elementary_divisor_counts', Verdict.FAIL, 0.0, None, str(e)))
    if spectrum is not None:
        finite = np.real(spectrum.finite)
        plus, minus = finite[finite > tol], finite[finite < -tol]
        clustered = all(len(c) == 0 or np.ptp(c) <= 1e-6 * max(1.0, np.abs(c).max()) for c in (plus, minus))
        divisors_ok = (spectrum.infinite_count == 1 and len(plus) >= 1 and len(minus) >= 1
               and len(plus) + len(minus) == n - 1 and clustered)
        checks.append(ConditionCheck(
            'elementary_divisor_counts', Verdict.PASS if divisors_ok else Verdict.FAIL, 0.0,
            float(spectrum.infinite_count),
            f'{spectrum.infinite_count} infinite, {len(plus)} positive, {len(minus)} negative finite'))
        if divisors_ok:
            p, q = len(plus), len(minus)
            eta1, eta2 = float(plus.mean()), float(minus.mean())
            margin = min(eta1, -eta2)
            checks.append(ConditionCheck('finite_eigenvalue_signs', Verdict.PASS if margin > 0 else Verdict.FAIL,
                                         0.0, margin, 'min(Re eta1, -Re eta2)'))
        else:
            checks.append(ConditionCheck('finite_eigenvalue_signs', Verdict.UNTESTABLE, 0.0, None,
                                         'finite divisors not identified'))
    else:
        checks.append(ConditionCheck('finite_eigenvalue_signs', Verdict.UNTESTABLE, 0.0, None,
                                     'singular pencil'))

    # spectra along [t_floor, T]
    grid = _structure_grid(t_floor, T, grid_size)
    x_grid = reduced.eval(0, grid)
    J_grid = f.jac_many(x_grid, grid, 0.0)
    A_grid = [A.value(t, 0.0) for t in grid]
    paths = _track_paths(grid, list(zip(J_grid, A_grid)))
    finite_paths = np.all(np.isfinite(paths))

    if not finite_paths:
        bad = int(np.argmax(~np.all(np.isfinite(paths), axis=1)))
        checks.append(ConditionCheck('distinct_eigenvalues', Verdict.FAIL, float(grid[bad]), None,
                                     'infinite eigenvalue on (0, T]'))
    else:
        scale = np.maximum(1.0, np.abs(paths).max(axis=1))
        gaps = np.array([min(abs(w[i] - w[j]) for i in range(n) for j in range(i + 1, n)) for w in paths]) / scale
        crossing = _first_crossing(grid, paths)
        if crossing is not None:
            t_cross, i, j = crossing
            checks.append(ConditionCheck('distinct_eigenvalues', Verdict.FAIL, t_cross, 0.0,
                                         f'eigenvalue paths {i} and {j} cross'))
        else:
            g = int(np.argmin(gaps))
            checks.append(ConditionCheck('distinct_eigenvalues', Verdict.PASS if gaps[g] > 1e-8 else Verdict.FAIL,
                                         float(grid[g]), float(gaps[g]), 'min relative eigenvalue gap'))

    # the turning eigenvalue grows like 1/t
    growth = []
    for t in (t_floor, 2 * t_floor, 4 * t_floor):
        x_t = reduced.eval(0, t)
        w = la.eigvals(f.jac(x_t, t, 0.0), A.value(t, 0.0))
        growth.append(t * np.max(np.abs(w)))
    growth = np.array(growth)
    ok_growth = np.all(np.isfinite(growth)) and growth.min() > 0 and growth.max() <= 1.1 * growth.min()
    checks.append(ConditionCheck('turning_eigenvalue_growth', Verdict.PASS if ok_growth else Verdict.FAIL,
                                 t_floor, float(growth[0]), 't * max|w(t)| near the turning point'))

    if p is None or not finite_paths:
        checks.append(ConditionCheck('eigenvalue_sign_pattern', Verdict.UNTESTABLE, None, None,
                                     'p, q unknown' if p is None else 'infinite eigenvalues'))
    else:
        re = paths.real
        counts_ok = [(np.sum(r > 0) == p + 1 and np.sum(r < 0) == q) for r in re]
        if all(counts_ok):
            margins = np.abs(re).min(axis=1)
            g = int(np.argmin(margins))
            checks.append(ConditionCheck('eigenvalue_sign_pattern', Verdict.PASS, float(grid[g]),
                                         float(margins[g]), f'{p + 1} positive and {q} negative everywhere'))
        else:
            g = counts_ok.index(False)
            checks.append(ConditionCheck('eigenvalue_sign_pattern', Verdict.FAIL, float(grid[g]),
                                         float(np.sum(re[g] > 0)), 'number of positive eigenvalues'))

    # vanishing eigenvalue of f_x^{-1} A stays in the right half plane
    mu_prev = None
    mu_min, t_min = np.inf, None
    for t, Jt, At in zip(grid, J_grid, A_grid):
        mu = la.eigvals(np.linalg.solve(Jt, At))
        mu_t = mu[np.argmin(np.abs(mu))] if mu_prev is None else mu[np.argmin(np.abs(mu - mu_prev))]
        mu_prev = mu_t
        if mu_t.real < mu_min:
            mu_min, t_min = float(mu_t.real), float(t)
    checks.append(ConditionCheck('vanishing_turning_eigenvalue', Verdict.PASS if mu_min > 0 else Verdict.FAIL,
                                 t_min, mu_min, 'min Re of the vanishing eigenvalue of f_x^-1 A'))

    report = StructureReport(checks=checks, grid=grid, p=p, q=q, eta1=eta1, eta2=eta2, paths=paths)
    turning_ok = all(report.check(name).verdict == Verdict.PASS for name in
                     ('turning_point_pencil', 'elementary_divisor_counts', 'finite_eigenvalue_signs'))
    if verbose:
        log_message('PencilAnalysis', f'{len(report.failed())} of {len(checks)} conditions not passed')
    if not turning_ok:
        return None, report

    P, Q = weierstrass_normalize(A0, J0, p, q)
    x0_end = reduced.values(0)[-1]
    A_T = A.value(T, 0.0)
    U, W = diagonalize_at_T(A_T, jacs[-1])
    structure = PencilStructure(
        n=n, p=p, q=q, eta1=eta1, eta2=eta2, P=P, Q=Q, Omega=P @ J0 @ Q, U=U, W=W, A_T=A_T,
        x0_start=x0_start, x0_end=x0_end,
        alpha_star=min(eta1, -eta2), beta_star=float(np.min(W[:p + 1])))
    return structure, report
