"""
The order-l asymptotic solution

    x_l(t, eps) = sum_{k<=l} eps^k (xbar_k(t) + Pi_k x(t/eps) + Q_k x((t-T)/eps)).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from pandas import DataFrame, concat

from src.config import SolverSettings
from src.errors import CapabilityError, StructureError
from src.layers import LayerSolution, LayerInputs, propagator
from src.matching import MatchConstants, solve_c0, solve_ck
from src.pencil import PencilStructure, StructureReport, Verdict, classify_and_verify
from src.problem import BVPProblem
from src.regular import SeriesField, build_regular_series
from src.util import log_message, save_frame


@dataclass
class ExpansionBundle:
    problem: BVPProblem
    order: int
    regular: SeriesField
    pi_layers: list[LayerSolution]
    q_layers: list[LayerSolution]
    constants: MatchConstants
    structure: PencilStructure
    report: StructureReport

    def __call__(self, t, eps: float) -> np.ndarray:
        return assemble(self, t, eps)

    def layers_frame(self) -> DataFrame:
        return concat([layer.to_frame() for layer in self.pi_layers + self.q_layers], ignore_index=True)

    def sample_frame(self, eps: float, count: int = 1001) -> DataFrame:
        t = np.linspace(0.0, self.problem.T, count)
        x = assemble(self, t, eps)
        n = x.shape[1]
        return DataFrame({
            't': np.repeat(t, n),
            'component': np.tile(np.arange(n), count),
            'value': x.ravel(),
        })

    def save_csv(self, save_dir: str | None) -> list[str]:
        name = self.problem.name()
        return [
            self.regular.to_csv(save_dir, f'{name}-l{self.order}-series'),
            save_frame(self.layers_frame(), save_dir, f'{name}-l{self.order}-layers'),
            self.constants.to_csv(save_dir, f'{name}-l{self.order}-constants'),
        ]


def build_expansion(problem: BVPProblem, order: int, settings: SolverSettings | None = None) -> ExpansionBundle:
    """
    Construct every term of the order-`order` expansion.

    :raises CapabilityError: if order + 1 exceeds the smoothness the problem declares.
    :raises StructureError: if a structural condition fails at t=0 or along [t_floor, T].
    :raises ConditionViolation: any other violation met while solving for the terms.
    """
    settings = settings or SolverSettings()
    if order < 0:
        raise ValueError(f'Order must be non-negative, got {order}.')
    if order + 1 > problem.max_order:
        raise CapabilityError(f'Order {order} needs jets of order {order + 1}; '
                              f'{problem.name()} is declared smooth up to {problem.max_order}.')
    regular = build_regular_series(problem, order, degree=settings.degree, tol=settings.tol,
                                   verbose=settings.verbose)
    structure, report = classify_and_verify(problem, regular, t_floor=settings.t_floor,
                                            grid_size=settings.structure_grid, verbose=settings.verbose)
    failed = [c.name for c in report.checks if c.verdict == Verdict.FAIL]
    if structure is None or failed:
        raise StructureError(f'Structural conditions fail for {problem.name()}: {", ".join(failed) or "t=0"}.')

    match = solve_c0(problem, structure, regular, settings)
    constants: MatchConstants = match.constants
    pi_layers, q_layers = [match.pi], [match.q]
    start_prop = propagator(problem, structure, 'start', match.pi, settings.propagator_rtol,
                            settings.propagator_atol)
    end_prop = propagator(problem, structure, 'end', match.q, settings.propagator_rtol, settings.propagator_atol)
    for k in range(1, order + 1):
        start = LayerInputs('start', regular, pi_layers, start_prop, settings.fixed_point_max_iter)
        end = LayerInputs('end', regular, q_layers, end_prop, settings.fixed_point_max_iter)
        higher = solve_ck(problem, structure, k, start, end, tol=settings.tol)
        constants.higher[k] = higher.constants
        pi_layers.append(higher.pi)
        q_layers.append(higher.q)
        if settings.verbose:
            log_message('Expansion', f'order {k} matched, residual {higher.constants.residual:.3e}')
    return ExpansionBundle(problem=problem, order=order, regular=regular, pi_layers=pi_layers, q_layers=q_layers,
                           constants=constants, structure=structure, report=report)


def assemble(bundle: ExpansionBundle, t, eps: float) -> np.ndarray:
    """
    :param t: a time or an array of times in [0, T].
    :return: x_l(t, eps), shape (n,) for a scalar t and (len(t), n) otherwise.
    """
    t = np.asarray(t, dtype=float)
    T = bundle.problem.T
    tau, xi = t / eps, (t - T) / eps
    out = np.zeros(t.shape + (bundle.problem.n,))
    for k in range(bundle.order, -1, -1):
        term = bundle.regular.eval(k, t) + bundle.pi_layers[k].eval(tau) + bundle.q_layers[k].eval(xi)
        out = out * eps + term if k < bundle.order else term
    return out
