"""Pure-Python branch-and-bound kernel (fallback for the compiled one).

Works on flat sequences of Python numbers, so it runs unchanged on floats
and on the scaled integers used by exact mode.  The float path performs the
same operations in the same order as the compiled kernel.
"""
from __future__ import annotations


def suffix_bounds(W, n: int, excluded: int):
    """``suffix[i]`` = sum over buyers k >= i of ``max(0, max_j W[k][j])``."""
    zero = type(W[0])(0) if len(W) else 0
    suffix = [zero] * (n + 1)
    for k in range(n - 1, -1, -1):
        best = zero
        if k != excluded:
            for j in range(n):
                if W[k * n + j] > best:
                    best = W[k * n + j]
        suffix[k] = suffix[k + 1] + best
    return suffix


def best_matching(W, H, n: int, excluded: int = -1):
    """Maximize ``sum_i W[i][j_i] - sum_{p<i} H[i][j_i][p][j_p]``.

    ``W`` is flat ``(n, n)``; ``H`` flat ``(n, n, n, n)`` holds the symmetric
    pairwise externality.  Returns ``(value, assign, nodes)`` for the first
    optimum in lexicographic order of the flattened 0/1 matrix.
    """
    suffix = suffix_bounds(W, n, excluded)
    zero = suffix[n]
    cur = [-1] * n
    used = [False] * n
    state = {"best": zero, "assign": list(cur), "nodes": 0}
    nn = n * n

    def dfs(i, partial):
        state["nodes"] += 1
        if i == n:
            if partial > state["best"]:
                state["best"] = partial
                state["assign"] = list(cur)
            return
        if partial + suffix[i] <= state["best"]:
            return
        cur[i] = -1
        dfs(i + 1, partial)
        if i == excluded:
            return
        for j in range(n - 1, -1, -1):
            if used[j]:
                continue
            delta = W[i * n + j]
            base = (i * n + j) * nn
            for p in range(i):
                q = cur[p]
                if q >= 0:
                    delta = delta - H[base + p * n + q]
            cur[i] = j
            used[j] = True
            dfs(i + 1, partial + delta)
            used[j] = False
        cur[i] = -1

    dfs(0, zero)
    return state["best"], tuple(state["assign"]), state["nodes"]
