"""Brute-force enumeration of feasible matchings (test oracle)."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from ..model import Matching

MAX_ENUM_N = 8


def _assignments(n: int, excluded: int = -1) -> Iterator[tuple[int, ...]]:
    cur = [-1] * n
    used = [False] * n

    def rec(i):
        if i == n:
            yield tuple(cur)
            return
        cur[i] = -1
        yield from rec(i + 1)
        if i == excluded:
            return
        for j in range(n - 1, -1, -1):
            if not used[j]:
                used[j] = True
                cur[i] = j
                yield from rec(i + 1)
                used[j] = False
        cur[i] = -1

    yield from rec(0)


def enumerate_matchings(n: int) -> Iterator[Matching]:
    """Every feasible matching once, in lexicographic order of flattened z."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n > MAX_ENUM_N:
        raise ValueError(f"n={n} is too large to enumerate (limit {MAX_ENUM_N})")
    for assign in _assignments(n):
        yield Matching(assign)


def count_matchings(n: int) -> int:
    from math import comb, factorial

    return sum(factorial(k) * comb(n, k) ** 2 for k in range(n + 1))


def objective(assign, w, d, kappa):
    """``sum_i g_i`` straight from the double-sum definition (nested lists)."""
    pairs = [(i, j) for i, j in enumerate(assign) if j >= 0]
    total = 0
    for i, j in pairs:
        g = w[i][j] - kappa[i][j]
        dij = d[i][j]
        for p, q in pairs:
            if p != i:
                g = g - dij[p][q]
        total = total + g
    return total


def oracle_solve(w, d, kappa, excluded: int | None = None):
    """First maximizer (lexicographic) by exhaustive enumeration.

    Returns ``(Matching, value, count)``.
    """
    w, d, kappa = np.asarray(w), np.asarray(d), np.asarray(kappa)
    n = w.shape[0]
    if n > MAX_ENUM_N:
        raise ValueError(f"n={n} is too large to enumerate (limit {MAX_ENUM_N})")
    wl, dl, kl = w.tolist(), d.tolist(), kappa.tolist()
    best, best_assign, count = None, None, 0
    for assign in _assignments(n, -1 if excluded is None else excluded):
        count += 1
        val = objective(assign, wl, dl, kl)
        if best is None or val > best:
            best, best_assign = val, assign
    return Matching(best_assign), best, count
