"""Problem instances, matchings and the per-buyer assignment payoff."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

from ._arith import DISTINCT_TOL, PROB_TOL, as_array, is_exact, l1
from .priors import DensePrior, ProductPrior


def own_pair_mask(n: int) -> np.ndarray:
    """Boolean ``(n, n, n, n)`` mask, True where ``p == i`` or ``q == j``."""
    idx = np.arange(n)
    i = idx[:, None, None, None]
    j = idx[None, :, None, None]
    p = idx[None, None, :, None]
    q = idx[None, None, None, :]
    return (p == i) | (q == j)


@dataclass(frozen=True, eq=False)
class AssignmentProblem:
    """Buyers, sellers, states and signals with payoff tensors.

    ``u`` and ``v`` are ``(n, n, m)`` arrays indexed ``[buyer, seller,
    state]``; ``c`` is ``(n, n, n, n, m)`` indexed ``[i, j, p, q, state]``
    (cost to buyer i matched with j when p is matched with q).  Entries
    of ``c`` with ``p == i`` or ``q == j`` are meaningless and are zeroed on
    construction.  All indices are 0-based.
    """

    states: tuple
    signal_sets: tuple
    u: np.ndarray
    v: np.ndarray
    c: np.ndarray
    prior: DensePrior | ProductPrior
    M: object
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        exact = np.asarray(self.u).dtype == object or self.prior.exact
        states = tuple(str(s) for s in self.states)
        signal_sets = tuple(tuple(str(x) for x in s) for s in self.signal_sets)
        n, m = len(signal_sets), len(states)
        u = as_array(self.u, exact)
        v = as_array(self.v, exact)
        c = as_array(self.c, exact)
        if u.shape != (n, n, m) or v.shape != (n, n, m):
            raise ValueError(f"u and v must have shape {(n, n, m)}, got {u.shape} and {v.shape}")
        if c.shape != (n, n, n, n, m):
            raise ValueError(f"c must have shape {(n, n, n, n, m)}, got {c.shape}")
        if self.prior.m != m or tuple(self.prior.sizes) != tuple(len(s) for s in signal_sets):
            raise ValueError("prior dimensions do not match states / signal sets")
        c = c.copy()
        c[own_pair_mask(n)] = Fraction(0) if exact else 0.0
        for a in (u, v, c):
            a.setflags(write=False)
        M = as_array(self.M, True).item() if exact else float(self.M)
        for name, val in (("states", states), ("signal_sets", signal_sets), ("u", u), ("v", v), ("c", c), ("M", M)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return len(self.signal_sets)

    @property
    def m(self) -> int:
        return len(self.states)

    @property
    def exact(self) -> bool:
        return self.u.dtype == object

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.signal_sets)

    def signal_index(self, i: int, label) -> int:
        if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
            if not 0 <= label < len(self.signal_sets[i]):
                raise ValueError(f"signal index {label} out of range for buyer {i + 1}")
            return int(label)
        try:
            return self.signal_sets[i].index(str(label))
        except ValueError:
            raise ValueError(f"unknown signal {label!r} for buyer {i + 1}") from None

    def profile(self, labels: Sequence) -> tuple[int, ...]:
        """Map a sequence of signal labels (or indices) to an index profile."""
        if len(labels) != self.n:
            raise ValueError(f"signal profile must have {self.n} entries")
        return tuple(self.signal_index(i, x) for i, x in enumerate(labels))

    def labels(self, b: Sequence[int]) -> list[str]:
        return [self.signal_sets[i][x] for i, x in enumerate(b)]

    def profiles(self) -> Iterator[tuple[int, ...]]:
        return (tuple(int(x) for x in b) for b in np.ndindex(*self.sizes))

    def others_shape(self, i: int) -> tuple[int, ...]:
        return self.sizes[:i] + self.sizes[i + 1:]

    def join(self, i: int, b_minus: Sequence[int], b_i: int) -> tuple[int, ...]:
        """Insert buyer i's signal into an opponents' profile."""
        b_minus = tuple(b_minus)
        return b_minus[:i] + (b_i,) + b_minus[i:]

    def with_cache_cleared(self) -> AssignmentProblem:
        self._cache.clear()
        return self


@dataclass(frozen=True)
class Matching:
    """Partial one-to-one buyer -> seller assignment.

    ``assign[i]`` is the seller of buyer i or -1 when unmatched.
    """

    assign: tuple

    def __post_init__(self):
        assign = tuple(int(a) for a in self.assign)
        n = len(assign)
        taken = [a for a in assign if a >= 0]
        if any(a >= n or a < -1 for a in assign) or len(taken) != len(set(taken)):
            raise ValueError(f"infeasible matching {assign}")
        object.__setattr__(self, "assign", assign)

    @classmethod
    def empty(cls, n: int) -> Matching:
        return cls((-1,) * n)

    @classmethod
    def from_array(cls, z) -> Matching:
        z = np.asarray(z)
        if z.ndim != 2 or z.shape[0] != z.shape[1]:
            raise ValueError("z must be a square array")
        if not np.isin(z, (0, 1)).all():
            raise ValueError("z entries must be 0 or 1")
        if (z.sum(axis=0) > 1).any() or (z.sum(axis=1) > 1).any():
            raise ValueError("z violates the one-to-one constraints")
        return cls(tuple(int(np.argmax(row)) if row.any() else -1 for row in z))

    @classmethod
    def from_pairs(cls, n: int, pairs) -> Matching:
        assign = [-1] * n
        for i, j in pairs:
            if assign[i] != -1:
                raise ValueError(f"buyer {i} matched twice")
            assign[i] = j
        return cls(tuple(assign))

    @property
    def n(self) -> int:
        return len(self.assign)

    @property
    def z(self) -> np.ndarray:
        z = np.zeros((self.n, self.n), dtype=int)
        for i, j in self.pairs():
            z[i, j] = 1
        return z

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, j) for i, j in enumerate(self.assign) if j >= 0]

    def sort_key(self) -> tuple[int, ...]:
        """Key ordering matchings like their row-major flattened z arrays."""
        n = self.n
        return tuple(0 if a < 0 else n - a for a in self.assign)

    def without(self, i: int) -> Matching:
        assign = list(self.assign)
        assign[i] = -1
        return Matching(tuple(assign))

    def to_json(self) -> list[list[int]]:
        """1-based ``[buyer, seller]`` pairs."""
        return [[i + 1, j + 1] for i, j in self.pairs()]


def payoff_g(z, w_i, d_i, kappa_i, i: int):
    """Buyer i's payoff ``sum_j [w_ij - sum_{p,q} d_ij^{pq} z_pq - kappa_ij] z_ij``.

    ``w_i`` and ``kappa_i`` have length n.  ``d_i`` is ``(n, n, n)`` indexed
    ``[j, p, q]``; the inner sum only touches other matched pairs, so the
    entries with ``p == i`` or ``q == j`` are never read.
    """
    match = z if isinstance(z, Matching) else Matching.from_array(z)
    n = match.n
    w_i, kappa_i, d_i = np.asarray(w_i), np.asarray(kappa_i), np.asarray(d_i)
    if w_i.shape != (n,) or kappa_i.shape != (n,) or d_i.shape != (n, n, n):
        raise ValueError(
            f"dimension mismatch: need w_i, kappa_i of shape ({n},) and d_i of shape ({n}, {n}, {n})"
        )
    j = match.assign[i]
    if j < 0:
        return Fraction(0) if w_i.dtype == object else 0.0
    total = w_i[j] - kappa_i[j]
    for p, q in match.pairs():
        if p != i:
            total = total - d_i[j, p, q]
    return total


def buyer_payoffs(match: Matching, w, d, kappa) -> list:
    """All buyers' ``g_k`` at ``match`` for stacked tensors.

    ``w``, ``kappa``: ``(n, n)``; ``d``: ``(n, n, n, n)``.
    """
    pairs = match.pairs()
    exact = w.dtype == object
    out = [Fraction(0) if exact else 0.0 for _ in range(match.n)]
    for i, j in pairs:
        g = w[i, j] - kappa[i, j]
        for p, q in pairs:
            if p != i:
                g = g - d[i, j, p, q]
        out[i] = g if exact else float(g)
    return out


# --- validation --------------------------------------------------------------


@dataclass
class Failure:
    code: str
    message: str
    where: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"code": self.code, "message": self.message, "where": self.where}


@dataclass
class ValidationReport:
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def codes(self) -> set[str]:
        return {f.code for f in self.failures}

    def to_json(self) -> dict:
        return {"passed": self.passed, "failures": [f.to_json() for f in self.failures]}


_MAX_REPORTED = 10


def _bound_failures(name: str, tensor: np.ndarray, M, axes: tuple[str, ...]) -> list[Failure]:
    out = []
    bad = np.argwhere((tensor < 0) | (tensor > M))
    for idx in bad[:_MAX_REPORTED]:
        value = tensor[tuple(idx)]
        out.append(
            Failure(
                "tensor out of bounds",
                f"{name} entry {float(value):.12g} outside [0, M]"
                + (" (nonnegativity)" if value < 0 else ""),
                {ax: int(k) + 1 for ax, k in zip(axes, idx)},
            )
        )
    return out


def conditional_signal_marginals(problem: AssignmentProblem, i: int) -> list[np.ndarray]:
    """``P_-i(. | b_i)`` for every ``b_i`` of buyer i (flattened)."""
    out = []
    for b_i in range(problem.sizes[i]):
        joint = problem.prior.joint_given(i, b_i).sum(axis=0).ravel()
        out.append(joint / joint.sum())
    return out


def validate_problem(problem: AssignmentProblem, dense_limit: int = 10**6) -> ValidationReport:
    """Check bounds, full support, normalization and distinct conditionals."""
    report = ValidationReport()
    if not problem.M > 0:
        report.failures.append(Failure("bad bound", "M must be positive"))
    report.failures += _bound_failures("u", problem.u, problem.M, ("buyer", "seller", "state"))
    report.failures += _bound_failures("v", problem.v, problem.M, ("buyer", "seller", "state"))
    report.failures += _bound_failures("c", problem.c, problem.M, ("buyer", "seller", "p", "q", "state"))

    prior = problem.prior
    cells = problem.m * int(np.prod(problem.sizes))
    if isinstance(prior, ProductPrior) and cells > dense_limit:
        entries = [prior.lam, prior.Q]
        total = sum(prior.lam)
        if any((e <= 0).any() for e in entries):
            report.failures.append(Failure("full support violated", "lambda and Q must be strictly positive"))
        row_sums = prior.Q.sum(axis=1)
        if not all(_is_one(s) for s in list(row_sums) + [total]):
            report.failures.append(Failure("prior not normalized", "lambda and Q rows must sum to 1"))
        # pairwise-distinct conditionals imply distinct full conditionals
        from .replica import pairwise_conditional

        phat = pairwise_conditional(prior.lam, prior.Q)
        for a in range(phat.shape[0]):
            for b in range(a + 1, phat.shape[0]):
                if not l1(phat[a], phat[b]) > DISTINCT_TOL:
                    report.failures.append(
                        Failure("conditionals coincide", "pairwise conditionals coincide", {"signals": [a + 1, b + 1]})
                    )
        return report

    table = prior.table()
    nonpos = np.argwhere(table <= 0)
    if len(nonpos):
        report.failures.append(
            Failure(
                "full support violated",
                f"{len(nonpos)} prior entries are not strictly positive",
                {"first": [int(k) + 1 for k in nonpos[0]]},
            )
        )
    total = table.sum()
    if not _is_one(total):
        report.failures.append(Failure("prior not normalized", f"prior sums to {float(total):.12g}"))
    if report.failures and "full support violated" in report.codes():
        return report
    for i in range(problem.n):
        marg = conditional_signal_marginals(problem, i)
        for a in range(len(marg)):
            for b in range(a + 1, len(marg)):
                if not l1(marg[a], marg[b]) > DISTINCT_TOL:
                    report.failures.append(
                        Failure(
                            "conditionals coincide",
                            f"P_-i(.|b_i) identical for two signals of buyer {i + 1}",
                            {"buyer": i + 1, "signals": [problem.signal_sets[i][a], problem.signal_sets[i][b]]},
                        )
                    )
    return report


def _is_one(total) -> bool:
    if is_exact(total):
        return total == 1
    return abs(float(total) - 1.0) <= PROB_TOL
