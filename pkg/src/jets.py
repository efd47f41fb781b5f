"""
Truncated Taylor series ("jets") in the small parameter.

A :class:`Jet` of order ``K`` stores the coefficients ``c[0], ..., c[K]`` of

    x(eps) = c[0] + c[1]*eps + ... + c[K]*eps**K + O(eps**(K+1))

where every coefficient is a numpy array of a common shape. Arithmetic between jets is exact
truncated-polynomial arithmetic (products are Cauchy convolutions), so composing a vector field with
a jet of its arguments yields the exact eps-Taylor coefficients of the composition up to order ``K``.

Problem definitions are written once and evaluated with plain floats/arrays or with jets. For this,
they use the module-level functions (:func:`exp`, :func:`cos`, :func:`stack`, :func:`diag`, ...)
which dispatch on their argument type.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


class Jet:
    """
    Truncated power series in eps with array-valued coefficients.

    :param coeffs: array of shape ``(K+1, *shape)``; ``coeffs[k]`` is the coefficient of ``eps**k``.
    """

    # numpy must hand mixed operations over to the reflected Jet operators
    __array_ufunc__ = None

    def __init__(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.ndim == 0:
            coeffs = coeffs.reshape(1)
        self.c = coeffs

    @classmethod
    def constant(cls, value, order: int) -> Jet:
        value = np.asarray(value, dtype=float)
        c = np.zeros((order + 1,) + value.shape)
        c[0] = value
        return cls(c)

    @classmethod
    def variable(cls, value=0.0, direction=1.0, order: int = 1) -> Jet:
        """Jet of ``value + direction*eps``."""
        value = np.asarray(value, dtype=float)
        direction = np.asarray(direction, dtype=float)
        shape = np.broadcast_shapes(value.shape, direction.shape)
        c = np.zeros((order + 1,) + shape)
        c[0] = value
        if order >= 1:
            c[1] = direction
        return cls(c)

    @classmethod
    def from_coefficients(cls, coeffs: Sequence) -> Jet:
        arrays = np.broadcast_arrays(*[np.asarray(ck, dtype=float) for ck in coeffs])
        return cls(np.stack(arrays, axis=0))

    @property
    def order(self) -> int:
        return self.c.shape[0] - 1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.c.shape[1:]

    @property
    def value(self) -> np.ndarray:
        return self.c[0]

    def coeff(self, k: int) -> np.ndarray:
        if k > self.order:
            raise IndexError(f'Coefficient {k} requested from a jet of order {self.order}.')
        return self.c[k]

    def truncate(self, order: int) -> Jet:
        if order > self.order:
            raise ValueError(f'Cannot extend a jet of order {self.order} to order {order}.')
        return Jet(self.c[:order + 1])

    def evaluate(self, h):
        """Sum of the truncated series at ``eps=h``."""
        ans = np.zeros(self.shape)
        for k in range(self.order, -1, -1):
            ans = ans * h + self.c[k]
        return ans

    def __getitem__(self, idx) -> Jet:
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Jet(self.c[(slice(None),) + idx])

    def __len__(self):
        return self.shape[0]

    def __repr__(self):
        return f'Jet(order={self.order}, shape={self.shape})'

    # arithmetic

    def __add__(self, other) -> Jet:
        a, b = _align(self, other)
        return Jet(a + b)

    def __radd__(self, other) -> Jet:
        return self + other

    def __sub__(self, other) -> Jet:
        a, b = _align(self, other)
        return Jet(a - b)

    def __rsub__(self, other) -> Jet:
        return (-self) + other

    def __neg__(self) -> Jet:
        return Jet(-self.c)

    def __pos__(self) -> Jet:
        return self

    def __mul__(self, other) -> Jet:
        if not isinstance(other, Jet):
            a, b = _align(self, Jet.constant(other, self.order))
            return Jet(a * b[0])
        a, b = _align(self, other)
        ans = np.zeros(np.broadcast_shapes(a.shape, b.shape))
        for k in range(ans.shape[0]):
            for j in range(k + 1):
                ans[k] += a[j] * b[k - j]
        return Jet(ans)

    def __rmul__(self, other) -> Jet:
        return self * other

    def __truediv__(self, other) -> Jet:
        if not isinstance(other, Jet):
            return self * (1.0 / np.asarray(other, dtype=float))
        a, b = _align(self, other)
        if np.any(b[0] == 0):
            raise ZeroDivisionError('leading coefficients in denominator equal zero')
        shape = np.broadcast_shapes(a.shape, b.shape)
        ans = np.zeros(shape)
        for k in range(shape[0]):
            tot = a[k] + np.zeros(shape[1:])
            for j in range(1, k + 1):
                tot = tot - b[j] * ans[k - j]
            ans[k] = tot / b[0]
        return Jet(ans)

    def __rtruediv__(self, other) -> Jet:
        return Jet.constant(other, self.order) / self

    def __matmul__(self, other) -> Jet:
        a, b = _lift_pair(self, other)
        order = min(a.order, b.order)
        first = a.c[0] @ b.c[0]
        ans = np.zeros((order + 1,) + first.shape)
        for k in range(order + 1):
            for j in range(k + 1):
                ans[k] += a.c[j] @ b.c[k - j]
        return Jet(ans)

    def __rmatmul__(self, other) -> Jet:
        return Jet.constant(other, self.order) @ self

    def __pow__(self, alpha) -> Jet:
        if isinstance(alpha, (int, np.integer)):
            if alpha < 0:
                return 1.0 / (self ** (-alpha))
            ans = Jet.constant(np.ones(self.shape), self.order)
            base = self
            n = int(alpha)
            while n > 0:
                if n % 2 == 1:
                    ans = ans * base
                base = base * base
                n //= 2
            return ans
        return self.power(float(alpha))

    # elementary functions

    def power(self, alpha: float) -> Jet:
        a = self.c
        if np.any(a[0] == 0):
            raise ZeroDivisionError('non-integer power of a jet with vanishing leading coefficient')
        ans = np.zeros_like(a)
        ans[0] = a[0] ** alpha
        for k in range(1, self.order + 1):
            tot = np.zeros(self.shape)
            for j in range(1, k + 1):
                tot = tot + ((alpha + 1) * j - k) * a[j] * ans[k - j]
            ans[k] = tot / (k * a[0])
        return Jet(ans)

    def sqrt(self) -> Jet:
        return self.power(0.5)

    def exp(self) -> Jet:
        a = self.c
        ans = np.zeros_like(a)
        ans[0] = np.exp(a[0])
        for k in range(1, self.order + 1):
            for j in range(1, k + 1):
                ans[k] += j * a[j] * ans[k - j]
            ans[k] /= k
        return Jet(ans)

    def log(self) -> Jet:
        a = self.c
        ans = np.zeros_like(a)
        ans[0] = np.log(a[0])
        for k in range(1, self.order + 1):
            tot = a[k].copy()
            for j in range(1, k):
                tot = tot - j * ans[j] * a[k - j] / k
            ans[k] = tot / a[0]
        return Jet(ans)

    def _sin_cos(self) -> tuple[Jet, Jet]:
        a = self.c
        s = np.zeros_like(a)
        c = np.zeros_like(a)
        s[0] = np.sin(a[0])
        c[0] = np.cos(a[0])
        for k in range(1, self.order + 1):
            for j in range(1, k + 1):
                s[k] += j * a[j] * c[k - j]
                c[k] -= j * a[j] * s[k - j]
            s[k] /= k
            c[k] /= k
        return Jet(s), Jet(c)

    def sin(self) -> Jet:
        return self._sin_cos()[0]

    def cos(self) -> Jet:
        return self._sin_cos()[1]

    def tan(self) -> Jet:
        s, c = self._sin_cos()
        return s / c

    def sinh(self) -> Jet:
        return 0.5 * (self.exp() - (-self).exp())

    def cosh(self) -> Jet:
        return 0.5 * (self.exp() + (-self).exp())

    def tanh(self) -> Jet:
        return self.sinh() / self.cosh()


def _lift_pair(a, b) -> tuple[Jet, Jet]:
    if isinstance(a, Jet) and isinstance(b, Jet):
        order = min(a.order, b.order)
        return a.truncate(order), b.truncate(order)
    if isinstance(a, Jet):
        return a, Jet.constant(b, a.order)
    return Jet.constant(a, b.order), b


def _align(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient arrays of two operands with a common order and broadcast-compatible shapes."""
    a, b = _lift_pair(a, b)
    nd = max(len(a.shape), len(b.shape))
    ca = a.c.reshape((a.c.shape[0],) + (1,) * (nd - len(a.shape)) + a.shape)
    cb = b.c.reshape((b.c.shape[0],) + (1,) * (nd - len(b.shape)) + b.shape)
    return ca, cb


def is_jet(x) -> bool:
    return isinstance(x, Jet)


def lift(x, order: int) -> Jet:
    """Jet of the given order; plain values become constant jets, jets are truncated."""
    if isinstance(x, Jet):
        return x.truncate(order)
    return Jet.constant(x, order)


def exp(x):
    return x.exp() if isinstance(x, Jet) else np.exp(x)


def log(x):
    return x.log() if isinstance(x, Jet) else np.log(x)


def sqrt(x):
    return x.sqrt() if isinstance(x, Jet) else np.sqrt(x)


def sin(x):
    return x.sin() if isinstance(x, Jet) else np.sin(x)


def cos(x):
    return x.cos() if isinstance(x, Jet) else np.cos(x)


def tan(x):
    return x.tan() if isinstance(x, Jet) else np.tan(x)


def sinh(x):
    return x.sinh() if isinstance(x, Jet) else np.sinh(x)


def cosh(x):
    return x.cosh() if isinstance(x, Jet) else np.cosh(x)


def tanh(x):
    return x.tanh() if isinstance(x, Jet) else np.tanh(x)


def stack(items: Iterable):
    """
    Stack scalars, arrays and jets along a new leading axis, broadcasting their shapes. The result is a
    jet as soon as one item is a jet.
    """
    items = list(items)
    jet_items = [it for it in items if isinstance(it, Jet)]
    if not jet_items:
        arrays = np.broadcast_arrays(*[np.asarray(it, dtype=float) for it in items])
        return np.stack(arrays, axis=0)
    order = min(it.order for it in jet_items)
    lifted = [lift(it, order) for it in items]
    shape = np.broadcast_shapes(*[it.shape for it in lifted])
    coeffs = [np.broadcast_to(it.c.reshape((order + 1,) + (1,) * (len(shape) - len(it.shape)) + it.shape),
                              (order + 1,) + shape) for it in lifted]
    return Jet(np.stack(coeffs, axis=1))


def diag(items: Sequence):
    """Diagonal matrix from scalar entries (floats or scalar jets)."""
    items = list(items)
    jet_items = [it for it in items if isinstance(it, Jet)]
    if not jet_items:
        return np.diag(np.asarray(items, dtype=float))
    order = min(it.order for it in jet_items)
    n = len(items)
    c = np.zeros((order + 1, n, n))
    for i, it in enumerate(items):
        it = lift(it, order)
        if it.shape != ():
            raise ValueError('diag expects scalar entries.')
        c[:, i, i] = it.c
    return Jet(c)
