"""
Routines for root finding.
"""
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from src.errors import SolverFailure, SingularJacobian


@dataclass(frozen=True)
class NewtonResult:
    x: np.ndarray
    iterations: int
    residual_norm: float


def _dense_solve(jac_x, rhs, cond_limit: float | None):
    if cond_limit is not None and np.linalg.cond(jac_x) > cond_limit:
        raise SingularJacobian(f'Jacobian condition number exceeds {cond_limit:.1e}.')
    try:
        return la.solve(jac_x, rhs)
    except la.LinAlgError as e:
        raise SingularJacobian(str(e)) from e


def _sparse_solve(jac_x, rhs):
    dx = spla.spsolve(sp.csc_matrix(jac_x), rhs)
    if not np.all(np.isfinite(dx)):
        raise SingularJacobian('Sparse Jacobian is singular.')
    return dx


def damped_newton(
        f: Callable[[np.ndarray], np.ndarray],
        x0: np.ndarray,
        jac: Callable[[np.ndarray], np.ndarray],
        tol: float,
        it_max: int = 50,
        max_halvings: int = 30,
        cond_limit: float | None = None) -> NewtonResult:
    """
    Use Newton-Raphson iteration with a halving line search to find the roots of a vector-valued function.
    Sparse Jacobians are solved with a sparse direct solver.

    :param f: vector-valued function whose roots to compute.
    :param x0: initial guess.
    :param jac: accepts the same arguments as `f` and returns the Jacobian matrix of `f` (dense or sparse).
    :param tol: termination tolerance on the max-norm of `f`.
    :param it_max: maximum number of Newton steps.
    :param max_halvings: maximum number of step halvings per Newton step.
    :param cond_limit: dense Jacobians with a larger condition number are treated as singular.
    :return: the root, the number of Newton steps taken and the final residual norm.
    :raises SingularJacobian: if a Newton system cannot be solved.
    :raises SolverFailure: if the line search stagnates or the iteration limit is exceeded.
    """
    x = np.array(x0, dtype=float)
    f_x = np.asarray(f(x), dtype=float)
    norm = np.max(np.abs(f_x), initial=0.0)
    for itn in range(it_max + 1):
        if norm <= tol:
            return NewtonResult(x=x, iterations=itn, residual_norm=float(norm))
        if itn == it_max:
            break
        jac_x = jac(x)
        if sp.issparse(jac_x):
            dx = _sparse_solve(jac_x, -f_x)
        else:
            dx = _dense_solve(np.asarray(jac_x, dtype=float), -f_x, cond_limit)
        step = 1.0
        for _ in range(max_halvings + 1):
            x_trial = x + step * dx
            f_trial = np.asarray(f(x_trial), dtype=float)
            norm_trial = np.max(np.abs(f_trial), initial=0.0)
            if np.isfinite(norm_trial) and norm_trial < (1 - 1e-4 * step) * norm:
                break
            step /= 2
        else:
            raise SolverFailure(f'Line search stagnated at residual {norm:.3e} after {itn} iterations.')
        x, f_x, norm = x_trial, f_trial, norm_trial
    raise SolverFailure(f'Maximum number of iterations ({it_max}) exceeded before tolerance could be met; '
                        f'residual {norm:.3e}.')
