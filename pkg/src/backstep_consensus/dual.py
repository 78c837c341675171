"""Sparse, nestable forward-mode dual numbers.

A :class:`Dual` carries a value and a map ``seed key -> partial``. Each
differentiation pass gets a fresh tag; a Dual with a higher tag may wrap
values and partials that are themselves Duals of lower tags, which gives
exact higher-order partials without perturbation confusion. Values may be
floats or numpy arrays (one entry per agent); arrays broadcast as usual.
"""

from __future__ import annotations

import itertools

import numpy as np

_tags = itertools.count(1)


def new_tag() -> int:
    return next(_tags)


class Dual:
    __slots__ = ("tag", "val", "d")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, tag: int, val, d: dict):
        self.tag = tag
        self.val = val
        self.d = d

    @classmethod
    def seed(cls, tag: int, key, val) -> "Dual":
        return cls(tag, val, {key: 1.0})

    def __repr__(self):
        return f"Dual(tag={self.tag}, val={self.val!r}, d={self.d!r})"

    def __add__(self, other):
        if not isinstance(other, Dual) or other.tag < self.tag:
            return Dual(self.tag, self.val + other, self.d)
        t = max(self.tag, other.tag)
        av, ad = _split(self, t)
        bv, bd = _split(other, t)
        d = dict(ad)
        for k, v in bd.items():
            d[k] = d[k] + v if k in d else v
        return Dual(t, av + bv, d)

    __radd__ = __add__

    def __neg__(self):
        return Dual(self.tag, -self.val, {k: -v for k, v in self.d.items()})

    def __pos__(self):
        return self

    def __sub__(self, other):
        if not isinstance(other, Dual) or other.tag < self.tag:
            return Dual(self.tag, self.val - other, self.d)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Dual) or other.tag < self.tag:
            return Dual(self.tag, self.val * other, {k: v * other for k, v in self.d.items()})
        t = max(self.tag, other.tag)
        av, ad = _split(self, t)
        bv, bd = _split(other, t)
        d = {k: v * bv for k, v in ad.items()}
        for k, v in bd.items():
            d[k] = d[k] + av * v if k in d else av * v
        return Dual(t, av * bv, d)

    __rmul__ = __mul__

    def reciprocal(self):
        r = 1.0 / self.val
        s = -(r * r)
        return Dual(self.tag, r, {k: s * v for k, v in self.d.items()})

    def __truediv__(self, other):
        if isinstance(other, Dual):
            return self * other.reciprocal()
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return other * self.reciprocal()

    def __pow__(self, n):
        if not isinstance(n, int) or n < 0:
            raise TypeError("Dual only supports nonnegative integer powers")
        if n == 0:
            return 1.0
        out = self
        for _ in range(n - 1):
            out = out * self
        return out


def _tag(x) -> int:
    return x.tag if isinstance(x, Dual) else 0


def _split(x, tag: int):
    if isinstance(x, Dual) and x.tag == tag:
        return x.val, x.d
    return x, {}


def value(x, tag: int):
    """Strip one differentiation level."""
    if isinstance(x, Dual) and x.tag == tag:
        return x.val
    return x


def partial(x, tag: int, key):
    if isinstance(x, Dual) and x.tag == tag:
        return x.d.get(key, 0.0)
    return 0.0


def primal(x):
    """Strip every differentiation level."""
    while isinstance(x, Dual):
        x = x.val
    return x


def _chain(x: Dual, fx, dfx) -> Dual:
    return Dual(x.tag, fx, {k: dfx * v for k, v in x.d.items()})


def sin(x):
    if isinstance(x, Dual):
        return _chain(x, sin(x.val), cos(x.val))
    return np.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return _chain(x, cos(x.val), -sin(x.val))
    return np.cos(x)


def tanh(x):
    if isinstance(x, Dual):
        th = tanh(x.val)
        return _chain(x, th, 1.0 - th * th)
    return np.tanh(x)


def exp(x):
    if isinstance(x, Dual):
        e = exp(x.val)
        return _chain(x, e, e)
    return np.exp(x)


def sqrt(x):
    if isinstance(x, Dual):
        r = sqrt(x.val)
        return _chain(x, r, 0.5 / r)
    return np.sqrt(x)
