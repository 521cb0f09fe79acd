"""Float / exact-rational arithmetic helpers.

Exact mode stores every tensor as a numpy object array of ``Fraction``.
Float mode uses float64.  The rest of the package only branches on
:func:`is_exact`.
"""
from __future__ import annotations

import math
from fractions import Fraction
from numbers import Rational

import numpy as np

PROB_TOL = 1e-12
DISTINCT_TOL = 1e-9

# bits of relative precision for rational square roots
_SQRT_BITS = 128


def is_exact(a) -> bool:
    if isinstance(a, np.ndarray):
        return a.dtype == object
    return isinstance(a, Rational)


def to_fraction(x) -> Fraction:
    """Exact rational from an int, Fraction, decimal string or float.

    Floats go through ``repr`` so that ``0.1`` becomes ``1/10`` rather than
    its binary expansion.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, str):
        return Fraction(x.strip())
    return Fraction(repr(float(x)))


def as_array(x, exact: bool) -> np.ndarray:
    if exact:
        arr = np.asarray(x, dtype=object)
        flat = [to_fraction(v) for v in arr.ravel()]
        out = np.empty(arr.shape, dtype=object)
        out.ravel()[:] = flat if flat else []
        return out
    return np.asarray(x, dtype=float)


def to_float_array(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=float) if a.dtype != object else np.vectorize(float, otypes=[float])(a)


def zeros(shape, exact: bool) -> np.ndarray:
    if exact:
        out = np.empty(shape, dtype=object)
        out.fill(Fraction(0))
        return out
    return np.zeros(shape)


def sqrt(x):
    """Square root; exact for rational perfect squares, else a rational
    within 2**-128 relative error (floats use ``math.sqrt``)."""
    if isinstance(x, Rational):
        x = Fraction(x)
        if x < 0:
            raise ValueError("negative argument")
        if x == 0:
            return Fraction(0)
        num, den = x.numerator, x.denominator
        rn, rd = math.isqrt(num), math.isqrt(den)
        if rn * rn == num and rd * rd == den:
            return Fraction(rn, rd)
        scale = 1 << _SQRT_BITS
        return Fraction(math.isqrt(num * den * scale * scale), den * scale)
    return math.sqrt(x)


def l1(a, b=None):
    """1-norm of ``a`` (or of ``a - b``); works for object arrays."""
    diff = np.asarray(a) if b is None else np.asarray(a) - np.asarray(b)
    return sum(abs(v) for v in diff.ravel()) if diff.dtype == object else float(np.abs(diff).sum())


def l2(a):
    a = np.asarray(a)
    if a.dtype == object:
        return sqrt(sum(v * v for v in a.ravel()))
    return float(np.sqrt(np.dot(a.ravel(), a.ravel())))


def close(a, b, tol: float) -> bool:
    """``|a - b| <= tol``; exact equality when both sides are rational."""
    if is_exact(a) and is_exact(b):
        return a == b
    return abs(float(a) - float(b)) <= tol


def dot_last(tensor: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Contract the last axis of ``tensor`` with ``probs``."""
    if tensor.dtype == object or np.asarray(probs).dtype == object:
        t = np.asarray(tensor, dtype=object)
        p = np.asarray(probs, dtype=object)
        out = np.tensordot(t, p, axes=([t.ndim - 1], [0]))
        return np.asarray(out, dtype=object)
    return tensor @ np.asarray(probs, dtype=float)
