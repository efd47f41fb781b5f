"""
Empirical check of the O(eps^(l+1)) error of the expansion against the reference solver.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from pandas import DataFrame

from src.config import SolverSettings
from src.expansion import ExpansionBundle, assemble, build_expansion
from src.problem import BVPProblem
from src.reference import MeshSpec, reference_solve
from src.util import log_message, save_frame


@dataclass(frozen=True)
class SlopeFit:
    slope: float | None
    intercept: float | None
    points: int
    at_floor: bool

    def meets(self, threshold: float) -> bool:
        return self.at_floor or (self.slope is not None and self.slope >= threshold)

    def describe(self) -> str:
        if self.at_floor:
            return 'at floor'
        return f'{self.slope:.3f} ({self.points} points)'


def fit_slope(eps: np.ndarray, values: np.ndarray, floor: float = 1e-10) -> SlopeFit:
    """
    Least-squares slope of log(values) against log(eps), ignoring values at or below `floor`. A series with fewer
    than two points above the floor is reported at floor.
    """
    eps, values = np.asarray(eps, dtype=float), np.asarray(values, dtype=float)
    mask = values > floor
    if mask.sum() < 2:
        return SlopeFit(slope=None, intercept=None, points=int(mask.sum()), at_floor=True)
    slope, intercept = np.polyfit(np.log(eps[mask]), np.log(values[mask]), 1)
    return SlopeFit(slope=float(slope), intercept=float(intercept), points=int(mask.sum()), at_floor=False)


def residuals(problem: BVPProblem, bundle: ExpansionBundle, eps: float, delta: float = 0.1,
              probe_count: int = 1001) -> tuple[float, float]:
    """
    :return: max over [delta, T - delta] of |eps A x_l' - f(x_l, t, eps)| with x_l' by centered differences of
             step eps*1e-3, and |M x_l(0) + N x_l(T) - d(eps)|.
    """
    T = problem.T
    if not 0 < delta < T / 2:
        raise ValueError(f'Interior margin must lie in (0, T/2), got {delta}.')
    t = np.linspace(delta, T - delta, probe_count)
    h = eps * 1e-3
    x = assemble(bundle, t, eps)
    dx = (assemble(bundle, t + h, eps) - assemble(bundle, t - h, eps)) / (2 * h)
    A = np.array([problem.A.value(ti, eps) for ti in t])
    interior = eps * np.einsum('pij,pj->pi', A, dx) - problem.f.eval_many(x, t, eps)
    bc = problem.bc
    boundary = bc.M @ assemble(bundle, 0.0, eps) + bc.N @ assemble(bundle, T, eps) - bc.d(eps)
    return float(np.max(np.abs(interior))), float(np.max(np.abs(boundary)))


def cross_term_defect(bundle: ExpansionBundle, eps: float) -> tuple[float, float]:
    """
    The terms M Q x(-T/eps) + N Pi x(T/eps) dropped when the boundary condition is split, and the bound
    kappa exp(-rate T / (2 eps)) with the measured decay of the leading layers.
    """
    problem = bundle.problem
    T = problem.T
    pi_far = sum(eps ** k * layer.eval(T / eps) for k, layer in enumerate(bundle.pi_layers))
    q_far = sum(eps ** k * layer.eval(-T / eps) for k, layer in enumerate(bundle.q_layers))
    defect = float(np.max(np.abs(problem.bc.M @ q_far + problem.bc.N @ pi_far)))
    decays = [layer.decay for layer in (bundle.pi_layers[0], bundle.q_layers[0]) if not layer.decay.undefined]
    if not decays:
        return defect, 0.0
    kappa = max(d.kappa for d in decays)
    rate = min(bundle.structure.alpha_star, bundle.structure.beta_star)
    return defect, float(kappa * np.exp(-rate * T / (2 * eps)))


@dataclass
class ConvergenceReport:
    problem: str
    order: int
    epsilons: list[float]
    max_errors: list[float]
    interior_residuals: list[float]
    boundary_residuals: list[float]
    cross_defects: list[float] = field(default_factory=list)
    reference_orders: list[int] = field(default_factory=list)
    floor: float = 1e-10

    @property
    def error_fit(self) -> SlopeFit:
        return fit_slope(self.epsilons, self.max_errors, self.floor)

    @property
    def interior_fit(self) -> SlopeFit:
        return fit_slope(self.epsilons, self.interior_residuals, self.floor)

    @property
    def boundary_fit(self) -> SlopeFit:
        return fit_slope(self.epsilons, self.boundary_residuals, self.floor)

    @property
    def slope(self) -> float | None:
        return self.error_fit.slope

    def passed(self) -> bool:
        k = self.order
        return (self.error_fit.meets(0.9 * (k + 1)) and self.interior_fit.meets(k + 0.8)
                and self.boundary_fit.meets(k + 0.8))

    def to_frame(self) -> DataFrame:
        return DataFrame({
            'epsilon': self.epsilons,
            'max_error': self.max_errors,
            'interior_residual': self.interior_residuals,
            'boundary_residual': self.boundary_residuals,
        })

    def to_csv(self, save_dir: str | None, name: str | None = None) -> str:
        return save_frame(self.to_frame(), save_dir, name or f'{self.problem}-l{self.order}-convergence')

    def summary(self) -> str:
        lines = [f'Convergence of {self.problem} at order {self.order} (expected error slope {self.order + 1})']
        for row in self.to_frame().itertuples(index=False):
            lines.append(f'  eps={row.epsilon:<10.3g} error={row.max_error:<12.4e} '
                         f'interior={row.interior_residual:<12.4e} boundary={row.boundary_residual:.4e}')
        lines.append(f'error slope:             {self.error_fit.describe()}')
        lines.append(f'interior residual slope: {self.interior_fit.describe()}')
        lines.append(f'boundary residual slope: {self.boundary_fit.describe()}')
        if self.cross_defects:
            lines.append(f'dropped boundary cross terms: max {max(self.cross_defects):.3e}')
        lines.append(f'verdict: {"PASS" if self.passed() else "FAIL"} (empirical confirmation only; the constants '
                     'of the error bound are not certified)')
        return '\n'.join(lines)


def _study_point(problem: BVPProblem, bundle: ExpansionBundle, eps: float, settings: SolverSettings) -> dict:
    spec = MeshSpec(intervals=settings.reference_intervals, constant=settings.shishkin_constant,
                    order=bundle.order)
    reference = reference_solve(problem, eps, spec, tol=settings.reference_tol,
                                guess=lambda t: assemble(bundle, t, eps), richardson=settings.richardson,
                                max_iter=settings.newton_max_iter, verbose=settings.verbose)
    probes = np.linspace(0.0, problem.T, settings.probe_count)
    error = float(np.max(np.abs(reference.eval(probes) - assemble(bundle, probes, eps))))
    interior, boundary = residuals(problem, bundle, eps, settings.interior_margin, settings.probe_count)
    defect, _ = cross_term_defect(bundle, eps)
    return {'error': error, 'interior': interior, 'boundary': boundary, 'defect': defect,
            'scheme_order': reference.scheme_order}


def convergence_study(problem: BVPProblem, order: int, epsilons: list[float],
                      settings: SolverSettings | None = None, bundle: ExpansionBundle | None = None,
                      probe_count: int | None = None) -> ConvergenceReport:
    """
    Max error of the order-`order` expansion against the reference solution for every eps, plus the residuals.
    The per-eps reference solves run in parallel with ``settings.jobs`` workers.
    """
    settings = settings or SolverSettings()
    if probe_count is not None:
        settings = settings.merged(probe_count=probe_count)
    if len(epsilons) < 3:
        raise ValueError('At least three values of eps are needed for a slope.')
    if bundle is None:
        bundle = build_expansion(problem, order, settings)
    points = Parallel(n_jobs=settings.jobs)(
        delayed(_study_point)(problem, bundle, eps, settings) for eps in epsilons)
    report = ConvergenceReport(
        problem=problem.name(), order=order, epsilons=list(epsilons),
        max_errors=[p['error'] for p in points],
        interior_residuals=[p['interior'] for p in points],
        boundary_residuals=[p['boundary'] for p in points],
        cross_defects=[p['defect'] for p in points],
        reference_orders=[p['scheme_order'] for p in points],
        floor=settings.slope_floor)
    if settings.verbose:
        log_message('Validation', f'{problem.name()} l={order}: error slope {report.error_fit.describe()}')
    return report
