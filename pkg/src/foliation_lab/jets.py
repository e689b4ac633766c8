"""Truncated multivariate Taylor arithmetic.

A :class:`Jet` holds the Taylor coefficients of a function of ``d`` chart
coordinates around a base point, truncated at a total degree.  Arithmetic on
jets is exact up to floating point rounding, so derivatives obtained this way
carry no discretisation error.  Jets broadcast like numpy arrays: the last
axis of ``Jet.coeffs`` indexes monomials, leading axes are free.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

MAX_ORDER = 4


class JetSpace:
    """Monomial bookkeeping for jets in ``dim`` variables up to ``max_order``."""

    def __init__(self, dim: int, max_order: int = MAX_ORDER):
        self.dim = dim
        self.max_order = max_order
        monos = [
            alpha
            for k in range(max_order + 1)
            for alpha in _compositions(k, dim)
        ]
        self.monomials = monos
        self.size = len(monos)
        self.index = {alpha: i for i, alpha in enumerate(monos)}
        self.degree = np.array([sum(a) for a in monos])
        self.factorial = np.array(
            [math.prod(math.factorial(k) for k in a) for a in monos], dtype=float
        )

        mul = np.zeros((self.size, self.size, self.size))
        for i, a in enumerate(monos):
            for j, b in enumerate(monos):
                c = tuple(x + y for x, y in zip(a, b))
                k = self.index.get(c)
                if k is not None:
                    mul[i, j, k] = 1.0
        self.mul_table = mul
        self.mul_flat = mul.reshape(self.size * self.size, self.size)

        # deriv[mu] maps coefficient vectors of g to those of d g / d x_mu
        deriv = np.zeros((dim, self.size, self.size))
        for mu in range(dim):
            for i, a in enumerate(monos):
                if a[mu] == 0:
                    continue
                b = list(a)
                b[mu] -= 1
                deriv[mu, i, self.index[tuple(b)]] = a[mu]
        self.deriv = deriv

    def mask(self, order: int) -> np.ndarray:
        return (self.degree <= order).astype(float)


def _compositions(total: int, parts: int):
    """All multi-indices of length ``parts`` summing to ``total`` (lex order)."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@lru_cache(maxsize=None)
def jet_space(dim: int, max_order: int = MAX_ORDER) -> JetSpace:
    return JetSpace(dim, max_order)


class Jet:
    """Truncated Taylor expansion (possibly an array of them).

    ``order`` is the highest total degree whose coefficients are valid.
    Coefficients above ``order`` are kept at zero.
    """

    __array_priority__ = 100

    def __init__(self, coeffs, order: int, space: JetSpace):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.order = int(order)
        self.space = space

    # -- constructors ----------------------------------------------------
    @classmethod
    def constant(cls, value, space: JetSpace, order: int | None = None) -> "Jet":
        order = space.max_order if order is None else order
        value = np.asarray(value, dtype=float)
        c = np.zeros(value.shape + (space.size,))
        c[..., 0] = value
        return cls(c, order, space)

    @classmethod
    def variable(cls, mu: int, base: float, space: JetSpace, order: int | None = None) -> "Jet":
        order = space.max_order if order is None else order
        c = np.zeros(space.size)
        c[0] = base
        if order >= 1:
            unit = [0] * space.dim
            unit[mu] = 1
            c[space.index[tuple(unit)]] = 1.0
        return cls(c, order, space)

    # -- basic access ----------------------------------------------------
    @property
    def shape(self):
        return self.coeffs.shape[:-1]

    @property
    def value(self):
        return self.coeffs[..., 0]

    def __getitem__(self, key) -> "Jet":
        if not isinstance(key, tuple):
            key = (key,)
        return Jet(self.coeffs[key + (slice(None),)], self.order, self.space)

    def partial(self, alpha) -> float | np.ndarray:
        """Partial derivative d^alpha at the base point."""
        alpha = tuple(alpha)
        if sum(alpha) > self.order:
            raise ValueError(f"jet of order {self.order} has no |alpha|={sum(alpha)} data")
        i = self.space.index[alpha]
        return self.coeffs[..., i] * self.space.factorial[i]

    def truncate(self, order: int) -> "Jet":
        order = min(order, self.order)
        return Jet(self.coeffs * self.space.mask(order), order, self.space)

    # -- arithmetic --------------------------------------------------------
    def _coerce(self, other) -> "Jet":
        if isinstance(other, Jet):
            return other
        return Jet.constant(other, self.space, self.order)

    def __add__(self, other):
        other = self._coerce(other)
        order = min(self.order, other.order)
        return Jet((self.coeffs + other.coeffs) * self.space.mask(order), order, self.space)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.coeffs, self.order, self.space)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, Jet):
            scalar = np.asarray(other, dtype=float)
            return Jet(self.coeffs * scalar[..., None], self.order, self.space)
        order = min(self.order, other.order)
        return Jet(_product(self.coeffs, other.coeffs, self.space) * self.space.mask(order),
                   order, self.space)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return self * (1.0 / np.asarray(other, dtype=float))

    def __pow__(self, k: int):
        if int(k) != k or k < 0:
            raise ValueError("only non-negative integer powers are supported")
        result = Jet.constant(np.ones(self.shape), self.space, self.order)
        base = self
        k = int(k)
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def diff(self, mu: int) -> "Jet":
        """Partial derivative along chart coordinate ``mu`` (order drops by one)."""
        if self.order < 1:
            raise ValueError("cannot differentiate an order-0 jet")
        return Jet(self.coeffs @ self.space.deriv[mu], self.order - 1, self.space)

    # -- analytic functions ----------------------------------------------
    def compose(self, derivatives) -> "Jet":
        """phi(self) given [phi(c0), phi'(c0), ...] evaluated at the constant term.

        ``derivatives`` may be a list of arrays broadcastable against ``self.value``.
        """
        h = Jet(self.coeffs.copy(), self.order, self.space)
        h.coeffs[..., 0] = 0.0
        out = Jet.constant(derivatives[0], self.space, self.order)
        power = Jet.constant(np.ones(self.shape), self.space, self.order)
        for k in range(1, self.order + 1):
            power = power * h
            out = out + power * (np.asarray(derivatives[k]) / math.factorial(k))
        return out

    def sin(self) -> "Jet":
        c0 = self.value
        d = [np.sin(c0), np.cos(c0), -np.sin(c0), -np.cos(c0)]
        return self.compose([d[k % 4] for k in range(self.order + 1)])

    def cos(self) -> "Jet":
        c0 = self.value
        d = [np.cos(c0), -np.sin(c0), -np.cos(c0), np.sin(c0)]
        return self.compose([d[k % 4] for k in range(self.order + 1)])

    def exp(self) -> "Jet":
        e = np.exp(self.value)
        return self.compose([e] * (self.order + 1))

    def reciprocal(self) -> "Jet":
        c0 = self.value
        if np.any(c0 == 0):
            raise ZeroDivisionError("reciprocal of a jet with zero constant term")
        return self.compose(
            [(-1) ** k * math.factorial(k) / c0 ** (k + 1) for k in range(self.order + 1)]
        )

    def __repr__(self):
        return f"Jet(shape={self.shape}, order={self.order}, value={self.value!r})"


def jet_matmul(a: Jet, b: Jet) -> Jet:
    """Matrix product of two 2-d arrays of jets."""
    order = min(a.order, b.order)
    M = a.space.size
    outer = np.einsum("ilp,ljq->ijpq", a.coeffs, b.coeffs)
    c = outer.reshape(outer.shape[:2] + (M * M,)) @ a.space.mul_flat
    return Jet(c * a.space.mask(order), order, a.space)


def _product(a: np.ndarray, b: np.ndarray, space: JetSpace) -> np.ndarray:
    """Truncated Cauchy product of broadcastable coefficient arrays."""
    outer = a[..., :, None] * b[..., None, :]
    return outer.reshape(outer.shape[:-2] + (space.size ** 2,)) @ space.mul_flat


def stack(jets, axis: int = 0) -> Jet:
    jets = list(jets)
    order = min(j.order for j in jets)
    if axis < 0:
        raise ValueError("negative axis not supported")
    c = np.stack([j.truncate(order).coeffs for j in jets], axis=axis)
    return Jet(c, order, jets[0].space)


def coordinate_jets(point, order: int, space: JetSpace | None = None) -> list[Jet]:
    point = np.asarray(point, dtype=float)
    space = space or jet_space(point.size)
    return [Jet.variable(mu, point[mu], space, order) for mu in range(point.size)]


def multi_indices(dim: int, order: int):
    """Multi-indices with total degree <= order, ordered by degree."""
    return [a for k in range(order + 1) for a in _compositions(k, dim)]


def all_partials(jet: Jet) -> dict:
    return {a: float(jet.partial(a)) for a in multi_indices(jet.space.dim, jet.order)}


__all__ = [
    "Jet",
    "JetSpace",
    "jet_space",
    "jet_matmul",
    "stack",
    "coordinate_jets",
    "multi_indices",
    "all_partials",
]
