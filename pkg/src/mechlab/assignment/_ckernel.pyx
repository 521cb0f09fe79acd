# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled branch-and-bound kernel over float64 data.

Same search order and arithmetic as the pure-Python kernel; the search runs
without the GIL so independent solves can share a thread pool.
"""
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy

import numpy as np


cdef struct Search:
    int n
    int excluded
    const double* W
    const double* H
    double* suffix
    int* cur
    int* best_assign
    char* used
    double best
    long long nodes


cdef void _dfs(Search* s, int i, double partial) noexcept nogil:
    cdef int n = s.n
    cdef int j, p, q
    cdef double delta
    cdef const double* hrow
    s.nodes += 1
    if i == n:
        if partial > s.best:
            s.best = partial
            memcpy(s.best_assign, s.cur, n * sizeof(int))
        return
    if partial + s.suffix[i] <= s.best:
        return
    s.cur[i] = -1
    _dfs(s, i + 1, partial)
    if i == s.excluded:
        return
    for j in range(n - 1, -1, -1):
        if s.used[j]:
            continue
        delta = s.W[i * n + j]
        hrow = s.H + (i * n + j) * n * n
        for p in range(i):
            q = s.cur[p]
            if q >= 0:
                delta = delta - hrow[p * n + q]
        s.cur[i] = j
        s.used[j] = 1
        _dfs(s, i + 1, partial + delta)
        s.used[j] = 0
    s.cur[i] = -1


def best_matching(W, H, int n, int excluded=-1):
    """Compiled counterpart of ``_pykernel.best_matching`` (float64 only)."""
    cdef double[::1] w = np.ascontiguousarray(W, dtype=np.float64).ravel()
    cdef double[::1] h = np.ascontiguousarray(H, dtype=np.float64).ravel()
    if w.shape[0] != n * n or h.shape[0] != n * n * n * n:
        raise ValueError("kernel inputs have the wrong size")
    cdef Search s
    cdef int k, j
    cdef double top
    s.n = n
    s.excluded = excluded
    s.W = &w[0] if n > 0 else NULL
    s.H = &h[0] if n > 0 else NULL
    s.suffix = <double*> malloc((n + 1) * sizeof(double))
    s.cur = <int*> malloc((n + 1) * sizeof(int))
    s.best_assign = <int*> malloc((n + 1) * sizeof(int))
    s.used = <char*> malloc(n + 1)
    if not s.suffix or not s.cur or not s.best_assign or not s.used:
        free(s.suffix); free(s.cur); free(s.best_assign); free(s.used)
        raise MemoryError()
    try:
        s.suffix[n] = 0.0
        for k in range(n - 1, -1, -1):
            top = 0.0
            if k != excluded:
                for j in range(n):
                    if s.W[k * n + j] > top:
                        top = s.W[k * n + j]
            s.suffix[k] = s.suffix[k + 1] + top
        for k in range(n):
            s.cur[k] = -1
            s.best_assign[k] = -1
            s.used[k] = 0
        s.best = 0.0
        s.nodes = 0
        with nogil:
            _dfs(&s, 0, 0.0)
        assign = tuple(s.best_assign[k] for k in range(n))
        return s.best, assign, s.nodes
    finally:
        free(s.suffix); free(s.cur); free(s.best_assign); free(s.used)
