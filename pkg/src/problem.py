from __future__ import annotations

from abc import ABC, abstractmethod
from functools import cached_property
from math import factorial
from typing import Callable, Literal, Sequence

import numpy as np

from src import jets
from src.errors import CapabilityError
from src.jets import Jet

MatrixFunction = Callable[..., object]
FieldFunction = Callable[..., object]


class EpsSeriesMatrix:
    """
    Matrix A(t, eps) given by a jet-aware callback. Its eps-Taylor coefficients, mixed partials at eps=0
    and layer re-expansions A(anchor + eps*s, eps) are all extracted with jets.

    :param n: dimension of the square matrix.
    :param matrix_fn: callback ``(t, eps) -> n x n`` accepting floats or scalar jets.
    :param max_order: highest jet order the callback is declared smooth for.
    """

    def __init__(self, n: int, matrix_fn: MatrixFunction, max_order: int):
        self.n = n
        self._fn = matrix_fn
        self.max_order = max_order

    def _check_order(self, k: int):
        if k > self.max_order:
            raise CapabilityError(f'Order {k} exceeds the declared smoothness order {self.max_order} of A.')

    def _jet_coeff(self, t, eps, k: int) -> np.ndarray:
        out = jets.lift(self._fn(t, eps), k).coeff(k)
        return np.broadcast_to(out, (self.n, self.n)).copy()

    def value(self, t: float, eps: float) -> np.ndarray:
        a = np.asarray(self._fn(float(t), float(eps)), dtype=float)
        if a.shape != (self.n, self.n):
            raise ValueError(f'A(t, eps) must be {self.n}x{self.n}, got shape {a.shape}.')
        return a

    def coeff(self, t: float, k: int) -> np.ndarray:
        """A_k(t), the coefficient of eps**k in A(t, eps)."""
        self._check_order(k)
        return self._jet_coeff(float(t), Jet.variable(0.0, 1.0, k), k)

    def layer_coeff(self, anchor: float, s: float, k: int) -> np.ndarray:
        """Coefficient of eps**k in A(anchor + eps*s, eps)."""
        self._check_order(k)
        return self._jet_coeff(Jet.variable(anchor, s, k), Jet.variable(0.0, 1.0, k), k)

    def t_partial(self, t: float, j: int, i: int) -> np.ndarray:
        """
        Mixed partial derivative d^(j+i) A / dt^j deps^i at (t, 0).

        Directional jets A(t + h, b*h) for m+1 distinct slopes b carry, in coefficient m = j+i, the
        combinations sum_c b**c * D_c / ((m-c)! c!), with D_c the partial with c eps-derivatives; these
        are separated with a small Vandermonde solve.
        """
        m = j + i
        self._check_order(m)
        slopes = np.linspace(-1.0, 1.0, m + 1) if m > 0 else np.array([0.0])
        samples = np.array([self._jet_coeff(Jet.variable(t, 1.0, m), Jet.variable(0.0, b, m), m)
                            for b in slopes])
        vander = np.vander(slopes, m + 1, increasing=True)
        scaled = np.linalg.solve(vander, samples.reshape(m + 1, -1)).reshape(samples.shape)
        return scaled[i] * factorial(j) * factorial(i)


class VectorFieldJet:
    """
    Vector field f(x, t, eps) given by a jet-aware callback.

    The callback is written componentwise (``x[0]``, ``x[1]``, ...) and combined with
    :func:`src.jets.stack`, so that ``x`` may carry extra trailing batch axes; this is how points are
    evaluated in batches and how Jacobians are taken with first-order jets.
    """

    def __init__(self, n: int, field_fn: FieldFunction, max_order: int):
        self.n = n
        self._fn = field_fn
        self.max_order = max_order

    def _check_order(self, k: int):
        if k > self.max_order:
            raise CapabilityError(f'Order {k} exceeds the declared smoothness order {self.max_order} of f.')

    def eval(self, x: np.ndarray, t: float, eps: float) -> np.ndarray:
        out = np.asarray(self._fn(np.asarray(x, dtype=float), float(t), float(eps)), dtype=float)
        return np.broadcast_to(out, (self.n,)).copy()

    def eval_many(self, x: np.ndarray, t, eps: float) -> np.ndarray:
        """:param x: points of shape (P, n); :param t: scalar or shape (P,); :return: shape (P, n)."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        out = np.asarray(self._fn(x.T, t, float(eps)), dtype=float)
        return np.broadcast_to(out, (self.n, x.shape[0])).T.copy()

    def jac(self, x: np.ndarray, t: float, eps: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x_jet = Jet(np.stack([np.broadcast_to(x[:, None], (self.n, self.n)), np.eye(self.n)]))
        out = jets.lift(self._fn(x_jet, float(t), float(eps)), 1)
        return np.broadcast_to(out.coeff(1), (self.n, self.n)).copy()

    def jac_many(self, x: np.ndarray, t, eps: float) -> np.ndarray:
        """:return: Jacobians of shape (P, n, n) at the points x of shape (P, n)."""
        x = np.asarray(x, dtype=float)
        p = x.shape[0]
        t = np.asarray(t, dtype=float)
        t = t[:, None] if t.ndim == 1 else t
        c0 = np.broadcast_to(x.T[:, :, None], (self.n, p, self.n))
        c1 = np.broadcast_to(np.eye(self.n)[:, None, :], (self.n, p, self.n))
        out = jets.lift(self._fn(Jet(np.stack([c0, c1])), t, float(eps)), 1)
        return np.moveaxis(np.broadcast_to(out.coeff(1), (self.n, p, self.n)), 0, 1).copy()

    def directional_many(self, x: np.ndarray, v: np.ndarray, t, eps: float) -> np.ndarray:
        """Products f_x(x_p) v_p for points and directions of shape (P, n)."""
        x = np.asarray(x, dtype=float)
        v = np.broadcast_to(np.asarray(v, dtype=float), x.shape)
        out = jets.lift(self._fn(Jet(np.stack([x.T, v.T])), np.asarray(t, dtype=float), float(eps)), 1)
        return np.broadcast_to(out.coeff(1), (self.n, x.shape[0])).T.copy()

    def d_eps(self, x: np.ndarray, t: float) -> np.ndarray:
        """Partial derivative in eps at eps=0."""
        out = jets.lift(self._fn(np.asarray(x, dtype=float), float(t), Jet.variable(0.0, 1.0, 1)), 1)
        return np.broadcast_to(out.coeff(1), (self.n,)).copy()

    def eval_jet(self, x: Jet, t, order: int) -> Jet:
        """
        Composition f(x(eps), t, eps) as a jet of the given order; ``t`` may itself be a jet
        (stretched layer time) and ``x`` may carry batch axes after the component axis.
        """
        self._check_order(order)
        x = jets.lift(x, order)
        eps = Jet.variable(0.0, 1.0, order)
        out = jets.lift(self._fn(x, t, eps), order)
        return Jet(np.broadcast_to(out.c, (order + 1,) + x.shape).copy())


class BoundaryData:
    """Boundary condition M x(0, eps) + N x(T, eps) = d(eps), with d given by its eps-coefficients."""

    def __init__(self, M: np.ndarray, N: np.ndarray, d_coeffs: Sequence):
        self.M = np.asarray(M, dtype=float)
        self.N = np.asarray(N, dtype=float)
        self._d = [np.asarray(dk, dtype=float) for dk in d_coeffs]
        n = self.M.shape[1]
        if self.M.shape != (n, n) or self.N.shape != (n, n):
            raise ValueError('Boundary matrices M and N must both be n x n.')

    def d_coeff(self, k: int) -> np.ndarray:
        if k < len(self._d):
            return self._d[k].copy()
        return np.zeros(self.M.shape[0])

    def d(self, eps: float) -> np.ndarray:
        return sum((eps ** k * dk for k, dk in enumerate(self._d)), np.zeros(self.M.shape[0]))


class BVPProblem(ABC):
    """
    Singularly perturbed boundary value problem

        eps A(t, eps) x' = f(x, t, eps),  0 <= t <= T,
        M x(0, eps) + N x(T, eps) = d(eps).

    Subclasses implement the jet-aware callbacks; boundary data and horizon may be overridden per instance.
    ``tube_radius`` documents the neighbourhood of the solution on which the callbacks are smooth.
    """
    n: int
    default_T: float
    max_order: int = 6
    tube_radius: float = np.inf

    def __init__(self, T: float | None = None, d_coeffs: Sequence | None = None):
        self.T = float(T) if T is not None else float(self.default_T)
        self._d_override = d_coeffs
        if self.T <= 0:
            raise ValueError(f'Horizon T must be positive, got {self.T}.')
        if self.n < 2:
            raise ValueError(f'Problem dimension must be at least 2, got {self.n}.')

    @classmethod
    @abstractmethod
    def name(cls) -> str:
        ...

    @abstractmethod
    def matrix(self, t, eps):
        ...

    @abstractmethod
    def vector_field(self, x, t, eps):
        ...

    @abstractmethod
    def boundary_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        ...

    @abstractmethod
    def default_d_coeffs(self) -> list[np.ndarray]:
        ...

    @abstractmethod
    def reduced_guess(self, t: float) -> np.ndarray:
        ...

    @cached_property
    def A(self) -> EpsSeriesMatrix:
        return EpsSeriesMatrix(self.n, self.matrix, self.max_order)

    @cached_property
    def f(self) -> VectorFieldJet:
        return VectorFieldJet(self.n, self.vector_field, self.max_order)

    @cached_property
    def bc(self) -> BoundaryData:
        M, N = self.boundary_matrices()
        d_coeffs = self._d_override if self._d_override is not None else self.default_d_coeffs()
        return BoundaryData(M, N, d_coeffs)

    def __repr__(self):
        return f'{self.__class__.__name__}(name={self.name()}, n={self.n}, T={self.T})'


def eval_A_coeff(problem: BVPProblem, t: float, k: int) -> np.ndarray:
    return problem.A.coeff(t, k)


def eval_A_layer0_coeff(
        problem: BVPProblem, s: float, k: int, anchor: Literal['start', 'end'] = 'start') -> np.ndarray:
    """
    Polynomial coefficient of eps**k in A(eps*tau, eps) (anchor 'start', s = tau >= 0) or in
    A(T + eps*xi, eps) (anchor 'end', s = xi <= 0).
    """
    if anchor == 'start':
        return problem.A.layer_coeff(0.0, s, k)
    return problem.A.layer_coeff(problem.T, s, k)


def eval_f_jet(problem: BVPProblem, x: Jet, t, K: int) -> Jet:
    if x.order < K:
        raise ValueError(f'Jet of order {x.order} cannot be composed to order {K}.')
    return problem.f.eval_jet(x, t, K)
