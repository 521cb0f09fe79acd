"""Replica economies with conditionally independent signals.

A family fixes a state prior ``lam``, a signal law ``Q[theta, x]`` over a
common signal set and a payoff generator; ``build_replica`` instantiates it
with n buyers.  Posterior-shift quantities are computed over *types*
(counts of each signal among the other buyers), which is exact and cheap
because the posterior depends on a profile only through its counts.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator

import numpy as np

from ._arith import DISTINCT_TOL, as_array, is_exact, l1, l2
from ._parallel import child_rng
from .model import AssignmentProblem
from .priors import ProductPrior
from .scoring import lipschitz_factor, neighbor_reward


def pairwise_conditional(lam, Q) -> np.ndarray:
    """``Phat[x, y] = P(b_j = y | b_i = x)`` for two distinct buyers."""
    lam, Q = np.asarray(lam), np.asarray(Q)
    exact = is_exact(lam) or is_exact(Q)
    lam, Q = as_array(lam, exact), as_array(Q, exact)
    joint = (Q * lam[:, None]).T @ Q  # [x, y] = sum_theta lam Q(x) Q(y)
    return joint / joint.sum(axis=1, keepdims=True)


def gap_constant(size: int) -> float:
    """``|X|^(-5/2) / (4(|X| - 1))``."""
    return size ** -2.5 / (4 * (size - 1))


def pairwise_gap(phat: np.ndarray, b: int, r: int):
    """Expected spherical-score advantage of reporting b over r given b."""
    pb, pr = phat[b], phat[r]
    return sum(x * y for x, y in zip(pb, pb)) / l2(pb) - sum(x * y for x, y in zip(pr, pb)) / l2(pr)


# --- deterministic payoff generator -------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = x + _GOLDEN
        x = (x ^ (x >> np.uint64(30))) * _M1
        x = (x ^ (x >> np.uint64(27))) * _M2
        return x ^ (x >> np.uint64(31))


def coordinate_hash(seed: int, tag: int, *coords: np.ndarray) -> np.ndarray:
    """64-bit hash of (seed, tag, coordinates), vectorized over coordinates."""
    h = _mix(np.full(np.broadcast(*coords).shape if coords else (), np.uint64(seed & (2**64 - 1))))
    h = _mix(h ^ np.uint64(tag))
    for c in coords:
        h = _mix(h ^ np.asarray(c, dtype=np.uint64))
    return h


def _grid_values(h: np.ndarray, M, exact: bool, den: int = 100):
    k = (h % np.uint64(den + 1)).astype(np.int64)
    if exact:
        out = np.empty(k.shape, dtype=object)
        out.ravel()[:] = [Fraction(int(x), den) * M for x in k.ravel()]
        return out
    return k / den * float(M)


def generate_tensors(n: int, m: int, M, seed: int, density: float = 1.0, exact: bool = False):
    """u, v, c with entry values depending only on (indices, state, seed)."""
    i, j, t = np.meshgrid(np.arange(n), np.arange(n), np.arange(m), indexing="ij")
    u = _grid_values(coordinate_hash(seed, 1, i, j, t), M, exact)
    v = _grid_values(coordinate_hash(seed, 2, i, j, t), M, exact)
    i, j, p, q, t = np.meshgrid(*(np.arange(n),) * 4, np.arange(m), indexing="ij")
    c = _grid_values(coordinate_hash(seed, 3, i, j, p, q, t), M, exact)
    if density < 1.0:
        keep = coordinate_hash(seed, 4, i, j, p, q, t) < np.uint64(int(density * 2**64 - 1))
        c = np.where(keep, c, c * 0)
    return u, v, c


@dataclass(frozen=True, eq=False)
class ReplicaFamily:
    lam: np.ndarray
    Q: np.ndarray
    M: object = 1
    seed: int = 0
    k: int = 1
    density: float = 1.0
    states: tuple | None = None
    signals: tuple | None = None

    def __post_init__(self):
        exact = is_exact(np.asarray(self.lam)) or is_exact(np.asarray(self.Q))
        lam, Q = as_array(self.lam, exact), as_array(self.Q, exact)
        if lam.ndim != 1 or Q.ndim != 2 or Q.shape[0] != len(lam) or Q.shape[1] < 2:
            raise ValueError("lambda must be (m,) and Q (m, |X|) with |X| >= 2")
        if (lam <= 0).any() or (Q <= 0).any():
            raise ValueError("lambda and Q must have full support")
        if self.k < 1:
            raise ValueError("k must be a positive integer")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "Q", Q)
        states = self.states or tuple(f"t{t + 1}" for t in range(len(lam)))
        signals = self.signals or tuple(f"x{x + 1}" for x in range(Q.shape[1]))
        object.__setattr__(self, "states", tuple(str(s) for s in states))
        object.__setattr__(self, "signals", tuple(str(s) for s in signals))

    @property
    def exact(self) -> bool:
        return self.lam.dtype == object

    @property
    def size(self) -> int:
        return self.Q.shape[1]

    @property
    def m(self) -> int:
        return len(self.lam)

    def phat(self) -> np.ndarray:
        return pairwise_conditional(self.lam, self.Q)

    def informative(self) -> bool:
        """Distinct rows of the pairwise conditional."""
        ph = self.phat()
        return all(l1(ph[a], ph[b]) > DISTINCT_TOL for a in range(len(ph)) for b in range(a + 1, len(ph)))


def build_replica(family: ReplicaFamily, n: int) -> AssignmentProblem:
    """The n-buyer instance of ``family`` (conditionally independent prior)."""
    if n < 2:
        raise ValueError("replica economies need n >= 2")
    if not family.informative():
        raise ValueError("signals are not pairwise informative: two rows of the pairwise conditional coincide")
    u, v, c = generate_tensors(n, family.m, family.M, family.seed, family.density, family.exact)
    prior = ProductPrior(family.lam, family.Q, n)
    return AssignmentProblem(family.states, [family.signals] * n, u, v, c, prior, family.M)


# --- type-level computations ----------------------------------------------------------


def compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    """All count vectors of length ``parts`` summing to ``total``."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


def _logsumexp(a: np.ndarray) -> float:
    top = a.max()
    return float(top + np.log(np.exp(a - top).sum()))


def _log_multinomial(counts) -> float:
    return math.lgamma(sum(counts) + 1) - sum(math.lgamma(c + 1) for c in counts)


def stable_l1(logp: np.ndarray, logq: np.ndarray) -> float:
    """``||p - q||_1`` from log-probabilities, accurate near point masses."""
    p, q = np.exp(logp), np.exp(logq)
    star = int(np.argmax(p))
    rest = np.arange(len(p)) != star
    diff = p[rest] - q[rest]
    return float(np.abs(diff).sum() + abs(diff.sum()))


def type_table(family: ReplicaFamily, n: int, b_i: int, r_i: int):
    """Per opponents' type: probability given b_i and posterior distance
    ``||rho(., b_i) - rho(., r_i)||_1``."""
    lam = np.log(np.asarray(family.lam, dtype=float))
    logQ = np.log(np.asarray(family.Q, dtype=float))
    prior_b = lam + logQ[:, b_i]
    prior_b_norm = prior_b - _logsumexp(prior_b)
    prior_r = lam + logQ[:, r_i]
    probs, dists = [], []
    for counts in compositions(n - 1, family.size):
        lik = logQ @ np.asarray(counts, dtype=float)
        lp = prior_b + lik
        lq = prior_r + lik
        lp = lp - _logsumexp(lp)
        lq = lq - _logsumexp(lq)
        probs.append(math.exp(_log_multinomial(counts) + _logsumexp(prior_b_norm + lik)))
        dists.append(0.0 if b_i == r_i else stable_l1(lp, lq))
    return np.array(probs), np.array(dists)


def profile_table(family: ReplicaFamily, n: int, b_i: int, r_i: int, i: int = 0):
    """Brute-force counterpart of :func:`type_table` over all profiles."""
    from .probability import posteriors_given, signal_marginal

    problem = build_replica(family, n)
    marg = np.asarray(signal_marginal(problem, i, b_i), dtype=float).ravel()
    pb = np.asarray(posteriors_given(problem, i, b_i), dtype=float).reshape(family.m, -1)
    pr = np.asarray(posteriors_given(problem, i, r_i), dtype=float).reshape(family.m, -1)
    return marg, np.abs(pb - pr).sum(axis=0)


def fixed_point(probs, dists) -> float:
    """Least ``eps >= 0`` with ``P(D > eps) <= eps`` for a discrete D."""
    probs, dists = np.asarray(probs, float), np.asarray(dists, float)
    order = np.argsort(dists, kind="stable")
    d, p = dists[order], probs[order]
    values, starts = np.unique(d, return_index=True)
    mass = np.add.reduceat(p, starts) if len(p) else np.array([])
    tail = mass[::-1].cumsum()[::-1]  # P(D >= values[k])
    lo, above = 0.0, float(tail[0]) if len(tail) else 0.0
    for k, val in enumerate(values):
        # on [lo, val) the tail P(D > eps) equals `above`
        cand = max(lo, above)
        if cand < val:
            return cand
        lo = float(val)
        above = float(tail[k + 1]) if k + 1 < len(tail) else 0.0
    return max(lo, above)


def nu_bound(family: ReplicaFamily, n: int, i: int = 0, method: str = "types", samples: int = 100_000,
             seed: int = 0) -> float:
    """``max_{b_i, r_i}`` of the posterior-shift fixed point ``nu_i^n``.

    ``method``: ``"types"`` (exact, by signal counts), ``"profiles"``
    (exact, enumerates all opponents' profiles) or ``"mc"`` (sampling).
    """
    best = 0.0
    X = family.size
    for b in range(X):
        for r in range(X):
            if r == b:
                continue
            if method == "types":
                probs, dists = type_table(family, n, b, r)
            elif method == "profiles":
                probs, dists = profile_table(family, n, b, r, i)
            elif method == "mc":
                probs, dists = _mc_table(family, n, b, r, samples, child_rng(seed, "nu", n, i, b, r))
            else:
                raise ValueError(f"unknown method {method!r}")
            best = max(best, fixed_point(probs, dists))
    return best


def _mc_table(family, n, b_i, r_i, samples, rng):
    lam = np.asarray(family.lam, float)
    Q = np.asarray(family.Q, float)
    post = lam * Q[:, b_i]
    post /= post.sum()
    thetas = rng.choice(family.m, size=samples, p=post)
    counts = np.zeros((samples, family.size))
    for t in range(family.m):
        rows = thetas == t
        counts[rows] = rng.multinomial(n - 1, Q[t], size=int(rows.sum()))
    logQ = np.log(Q)
    lik = counts @ logQ.T
    lp = np.log(lam) + np.log(Q[:, b_i]) + lik
    lq = np.log(lam) + np.log(Q[:, r_i]) + lik
    lp -= np.logaddexp.reduce(lp, axis=1, keepdims=True)
    lq -= np.logaddexp.reduce(lq, axis=1, keepdims=True)
    dists = np.array([stable_l1(a, b) for a, b in zip(lp, lq)])
    return np.full(samples, 1.0 / samples), dists


def expected_shift(family: ReplicaFamily, n: int, b_i: int, r_i: int) -> float:
    """``sum_{b_-i} ||rho(b) - rho(b_-i, r_i)||_1 P(b_-i | b_i)``."""
    probs, dists = type_table(family, n, b_i, r_i)
    return float(np.dot(probs, dists))


def posterior_concentration(family: ReplicaFamily, n: int) -> float:
    """``E ||rho(b) - point mass on the true state||_1`` over states and profiles."""
    lam = np.asarray(family.lam, float)
    logQ = np.log(np.asarray(family.Q, float))
    total = 0.0
    for counts in compositions(n, family.size):
        lik = logQ @ np.asarray(counts, dtype=float)
        lp = np.log(lam) + lik
        lp -= _logsumexp(lp)
        post = np.exp(lp)
        for t in range(family.m):
            weight = lam[t] * math.exp(_log_multinomial(counts) + lik[t])
            total += weight * 2 * post[np.arange(family.m) != t].sum()
    return total


# --- rewards, margins, deficit -----------------------------------------------------------


def neighbor_rewards(family: ReplicaFamily, n: int, b, k: int | None = None) -> tuple:
    """Cyclic neighbor spherical rewards ``xi_i(b)`` scaled by ``n^-(k+2)``."""
    k = family.k if k is None else k
    b = tuple(int(x) for x in b)
    if len(b) != n or n < 2:
        raise ValueError(f"need a profile of length n = {n} >= 2")
    phat = family.phat()
    return tuple(neighbor_reward(phat, k, i, b) for i in range(n))


def reward_gap(family: ReplicaFamily, n: int, b_i: int, r_i: int, k: int | None = None):
    """Expected neighbor-reward advantage of honesty (the scaled pairwise gap)."""
    k = family.k if k is None else k
    gap = pairwise_gap(family.phat(), b_i, r_i)
    return gap / n ** (k + 2)


def ic_margin(family: ReplicaFamily, n: int, b_i: int, r_i: int, k: int | None = None) -> float:
    """Reward gap minus the Lipschitz bound on the deviation gain."""
    gap = float(reward_gap(family, n, b_i, r_i, k))
    return gap - float(lipschitz_factor(n, float(family.M))) * expected_shift(family, n, b_i, r_i)


def worst_ic_margin(family: ReplicaFamily, n: int, k: int | None = None) -> float:
    X = family.size
    return min(ic_margin(family, n, b, r, k) for b in range(X) for r in range(X) if r != b)


def ic_threshold(family: ReplicaFamily, k: int | None, n_range) -> dict:
    """Margin curve over ``n_range`` and the least n from which every later
    margin in range is positive (None if never)."""
    curve = [(n, worst_ic_margin(family, n, k)) for n in n_range]
    n_hat = None
    for n, margin in reversed(curve):
        if margin > 0:
            n_hat = n
        else:
            break
    return {"n_hat": n_hat, "curve": curve}


def max_reward_sum(family: ReplicaFamily, n: int, k: int | None = None):
    """``max_b sum_i xi_i(b)`` via the best closed walk of length n.

    The sum runs over the cycle ``b_1 -> b_2 -> ... -> b_n -> b_1``, so it is
    a longest closed walk over signals with edge weights from the pairwise
    conditional.
    """
    k = family.k if k is None else k
    phat = np.asarray(family.phat(), dtype=float)
    f = phat / np.sqrt((phat**2).sum(axis=1, keepdims=True))  # f[x, y]
    X = family.size
    best = -np.inf
    for start in range(X):
        walk = f[start].copy()  # best weight of length-1 walks start -> y
        for _ in range(n - 1):
            walk = (walk[:, None] + f).max(axis=0)
        best = max(best, walk[start])
    return best / n ** (k + 2)


def max_reward_sum_bruteforce(family: ReplicaFamily, n: int, k: int | None = None) -> float:
    import itertools

    return max(float(sum(neighbor_rewards(family, n, b, k))) for b in itertools.product(range(family.size), repeat=n))


def replica_rows(family: ReplicaFamily, n_range, k: int | None = None, method: str = "types",
                 samples: int = 100_000, seed: int = 0, timing: bool = True) -> list[dict]:
    """One CSV row per n: n, max nu, sum-xi bound, worst IC margin, deficit, runtime."""
    k = family.k if k is None else k
    rows = []
    for n in n_range:
        start = time.perf_counter()
        nu = nu_bound(family, n, method=method, samples=samples, seed=seed)
        row = {
            "n": n,
            "max_nu": nu,
            "sum_xi_bound": 1.0 / n ** (k + 1),
            "worst_ic_margin": worst_ic_margin(family, n, k),
            "deficit": float(max_reward_sum(family, n, k)),
        }
        row["runtime_s"] = time.perf_counter() - start if timing else 0.0
        rows.append(row)
    return rows


CSV_COLUMNS = ("n", "max_nu", "sum_xi_bound", "worst_ic_margin", "deficit", "runtime_s")


__all__ = [
    "CSV_COLUMNS",
    "ReplicaFamily",
    "build_replica",
    "compositions",
    "expected_shift",
    "fixed_point",
    "generate_tensors",
    "ic_margin",
    "ic_threshold",
    "gap_constant",
    "max_reward_sum",
    "max_reward_sum_bruteforce",
    "nu_bound",
    "pairwise_conditional",
    "pairwise_gap",
    "posterior_concentration",
    "replica_rows",
    "reward_gap",
    "neighbor_rewards",
    "type_table",
    "worst_ic_margin",
]
