"""Exact solver for max_z sum_i g_i(z; w_i, d_i, kappa_i)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ..model import Matching, buyer_payoffs, own_pair_mask
from .._arith import as_array, is_exact
from . import kernels
from ._pykernel import best_matching as _py_best


@dataclass(frozen=True)
class QapSolution:
    matching: Matching
    value: object
    per_buyer: tuple
    nodes: int = 0
    backend: str = ""

    def to_json(self) -> dict:
        return {
            "matching": self.matching.to_json(),
            "value": float(self.value),
            "per_buyer": [float(g) for g in self.per_buyer],
        }


def prepare(w, d, kappa, n: int | None = None):
    """Coerce ``(w, d, kappa)`` to arrays of a common arithmetic.

    ``d`` may be None (no externalities).  Entries with ``p == i`` or
    ``q == j`` are zeroed.  Raises on dimension mismatch or negative ``d``.
    """
    w, kappa = np.asarray(w), np.asarray(kappa)
    exact = is_exact(w) or is_exact(kappa) or (d is not None and is_exact(np.asarray(d)))
    if n is None:
        n = w.shape[0] if w.ndim else 0
    w, kappa = as_array(w, exact), as_array(kappa, exact)
    if d is None:
        d = np.zeros((n, n, n, n), dtype=int)
    d = as_array(d, exact)
    if w.shape != (n, n) or kappa.shape != (n, n) or d.shape != (n, n, n, n):
        raise ValueError(f"dimension mismatch for n={n}: w {w.shape}, d {d.shape}, kappa {kappa.shape}")
    if (d < 0).any():
        raise ValueError("externality entries must be nonnegative")
    d = d.copy()
    d[own_pair_mask(n)] = Fraction(0) if exact else 0.0
    return w, d, kappa, exact


def pairwise(d: np.ndarray) -> np.ndarray:
    """``H[i,j,p,q] = d[i,j,p,q] + d[p,q,i,j]``: cost of the pair of matches."""
    return d + d.transpose(2, 3, 0, 1)


def _integerize(*arrays):
    den = 1
    for a in arrays:
        for x in a.ravel():
            den = math.lcm(den, x.denominator)
    return den, [[int(x * den) for x in a.ravel()] for a in arrays]


def _solve(w, d, kappa, n, excluded: int, backend: str | None, certify: bool) -> QapSolution:
    w, d, kappa, exact = prepare(w, d, kappa, n)
    n = w.shape[0]
    if not 0 <= excluded + 1 <= n:
        raise ValueError(f"buyer index {excluded} out of range")
    if n == 0:
        return QapSolution(Matching(()), Fraction(0) if exact else 0.0, (), 1, "none")
    W = w - kappa
    H = pairwise(d)
    if exact:
        _, (Wi, Hi) = _integerize(W, H)
        _, assign, nodes = _py_best(Wi, Hi, n, excluded)
        used = "python-exact"
    else:
        used = backend or kernels.BACKEND
        kernel = kernels.get_kernel(used)
        if used == "python":
            _, assign, nodes = kernel(W.ravel().tolist(), H.ravel().tolist(), n, excluded)
        else:
            _, assign, nodes = kernel(W, H, n, excluded)
    match = Matching(assign)
    per = tuple(buyer_payoffs(match, w, d, kappa))
    value = sum(per, Fraction(0)) if exact else float(sum(per))
    sol = QapSolution(match, value, per, int(nodes), used)
    if certify:
        _certify(sol, w, d, kappa, excluded)
    return sol


def _certify(sol: QapSolution, w, d, kappa, excluded: int) -> None:
    from .oracle import oracle_solve

    match, value, _ = oracle_solve(w, d, kappa, None if excluded < 0 else excluded)
    if is_exact(value):
        ok = value == sol.value and match == sol.matching
    else:
        ok = abs(float(value) - float(sol.value)) <= 1e-9
    if not ok:
        raise AssertionError(f"solver returned {sol.matching} ({sol.value}), enumeration {match} ({value})")


def solve_qap(w, d, kappa, n: int | None = None, *, backend: str | None = None, certify: bool = False) -> QapSolution:
    """Maximize total payoff over all feasible matchings.

    Ties go to the lexicographically smallest flattened z.  ``certify``
    re-checks the answer against exhaustive enumeration (n <= 8).
    """
    return _solve(w, d, kappa, n, -1, backend, certify)


def solve_qap_excluding(w, d, kappa, n: int | None, i: int, *, backend: str | None = None,
                        certify: bool = False) -> QapSolution:
    """Same as :func:`solve_qap` over matchings leaving buyer ``i`` unmatched."""
    if n is not None and not 0 <= i < n:
        raise ValueError(f"buyer index {i} out of range")
    return _solve(w, d, kappa, n, i, backend, certify)
