"""Posteriors, conditional signal marginals, posterior partitions and beliefs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._arith import PROB_TOL, as_array, dot_last, l1
from .model import AssignmentProblem


@dataclass(frozen=True, eq=False)
class StateDistribution:
    """Probability vector over the state set."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs)
        p = as_array(p, p.dtype == object)
        if p.ndim != 1 or len(p) == 0:
            raise ValueError("state distribution must be a non-empty vector")
        if (p < 0).any():
            raise ValueError("state distribution has negative entries")
        total = p.sum()
        if p.dtype == object:
            if total != 1:
                raise ValueError(f"state distribution sums to {total}")
        elif abs(total - 1.0) > PROB_TOL:
            raise ValueError(f"state distribution sums to {float(total):.15g}")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def point(cls, m: int, k: int, exact: bool = False) -> StateDistribution:
        p = as_array(np.zeros(m, dtype=int), exact)
        p[k] = 1 if exact else 1.0
        return cls(p)

    @classmethod
    def uniform(cls, m: int, exact: bool = False) -> StateDistribution:
        if exact:
            from fractions import Fraction

            return cls(np.array([Fraction(1, m)] * m, dtype=object))
        return cls(np.full(m, 1.0 / m))

    @property
    def m(self) -> int:
        return len(self.probs)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, StateDistribution):
            return NotImplemented
        return self.probs.shape == other.probs.shape and bool((self.probs == other.probs).all())

    def __hash__(self):
        return hash(tuple(self.probs.tolist()))

    def distance(self, other) -> float:
        return l1(self.probs, _probs(other))

    def tolist(self) -> list:
        return self.probs.tolist()


def _probs(pi) -> np.ndarray:
    return pi.probs if isinstance(pi, StateDistribution) else np.asarray(pi)


def _check_profile(problem: AssignmentProblem, b) -> tuple[int, ...]:
    if len(b) != problem.n:
        raise ValueError(f"signal profile must have {problem.n} entries")
    return problem.profile(b)


def posterior(problem: AssignmentProblem, b) -> StateDistribution:
    """``P_Theta(. | b)`` for an index (or label) profile ``b``."""
    b = _check_profile(problem, b)
    joint = problem.prior.joint_at(b)
    return StateDistribution(joint / joint.sum())


def posteriors_given(problem: AssignmentProblem, i: int, r_i: int) -> np.ndarray:
    """All posteriors ``rho(b_-i, r_i)`` as an ``(m, *others)`` array."""
    key = ("posteriors", i, r_i)
    cached = problem._cache.get(key)
    if cached is None:
        joint = problem.prior.joint_given(i, r_i)
        cached = joint / joint.sum(axis=0, keepdims=True)
        cached.setflags(write=False)
        problem._cache.setdefault(key, cached)
    return cached


def signal_marginal(problem: AssignmentProblem, i: int, b_i) -> np.ndarray:
    """``P_-i(b_-i | b_i)`` as an array shaped like the opponents' signal sets."""
    if not 0 <= i < problem.n:
        raise ValueError(f"buyer index {i} out of range")
    b_i = problem.signal_index(i, b_i)
    key = ("marginal", i, b_i)
    cached = problem._cache.get(key)
    if cached is None:
        joint = problem.prior.joint_given(i, b_i).sum(axis=0)
        cached = joint / joint.sum()
        cached.setflags(write=False)
        problem._cache.setdefault(key, cached)
    return cached


def state_given_signal(problem: AssignmentProblem, i: int, b_i) -> np.ndarray:
    """``P_Theta(. | b_i)`` from buyer i's own signal alone."""
    b_i = problem.signal_index(i, b_i)
    joint = problem.prior.joint_given(i, b_i)
    per_state = joint.reshape(problem.m, -1).sum(axis=1)
    return per_state / per_state.sum()


def expect(tensor: np.ndarray, pi) -> np.ndarray:
    """Mix the state slices of ``tensor`` (state on the last axis)."""
    return dot_last(tensor, _probs(pi))


def expect_tensors(problem: AssignmentProblem, pi):
    """Expected ``(w, d, kappa) = (u(pi), c(pi), v(pi))`` for all buyers.

    Shapes: ``(n, n)``, ``(n, n, n, n)``, ``(n, n)``.
    """
    p = _probs(pi)
    if p.shape != (problem.m,):
        raise ValueError(f"posterior must have {problem.m} entries")
    return expect(problem.u, p), expect(problem.c, p), expect(problem.v, p)


# --- partitions and beliefs ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class PosteriorClass:
    representative: np.ndarray
    profiles: tuple  # opponents' profiles b_-i sharing this posterior


@dataclass(frozen=True, eq=False)
class PosteriorPartition:
    owner: int
    signal: int
    classes: tuple

    def __len__(self):
        return len(self.classes)

    def locate(self, pi) -> int:
        """Index of the class whose representative equals ``pi``."""
        p = _probs(pi)
        for k, cls in enumerate(self.classes):
            if _same_posterior(cls.representative, p):
                return k
        raise ValueError("posterior is not attained by any opponents' profile")

    def class_of(self, b_minus) -> int:
        b_minus = tuple(b_minus)
        for k, cls in enumerate(self.classes):
            if b_minus in cls.profiles:
                return k
        raise ValueError(f"profile {b_minus} not in partition")

    def to_json(self, problem: AssignmentProblem | None = None) -> dict:
        def lab(b_minus):
            if problem is None:
                return [x + 1 for x in b_minus]
            others = [k for k in range(problem.n) if k != self.owner]
            return [problem.signal_sets[k][x] for k, x in zip(others, b_minus)]

        return {
            "buyer": self.owner + 1,
            "signal": self.signal if problem is None else problem.signal_sets[self.owner][self.signal],
            "classes": [
                {"posterior": [float(x) for x in c.representative], "profiles": [lab(b) for b in c.profiles]}
                for c in self.classes
            ],
        }


def _same_posterior(a, b) -> bool:
    a, b = np.asarray(a), np.asarray(b)
    if a.dtype == object and b.dtype == object:
        return bool((a == b).all())
    return l1(np.asarray(a, dtype=float), np.asarray(b, dtype=float)) <= PROB_TOL


def posterior_partition(problem: AssignmentProblem, i: int, r_i) -> PosteriorPartition:
    """Group opponents' profiles by the posterior they induce with ``r_i``.

    Float mode merges posteriors within 1e-12 in 1-norm; exact mode groups
    on equality.  Classes are ordered by their representative vectors so the
    result does not depend on profile enumeration order.
    """
    r_i = problem.signal_index(i, r_i)
    key = ("partition", i, r_i)
    cached = problem._cache.get(key)
    if cached is not None:
        return cached
    post = posteriors_given(problem, i, r_i)
    m = problem.m
    shape = problem.others_shape(i)
    profiles = [tuple(int(x) for x in b) for b in np.ndindex(*shape)]
    vectors = post.reshape(m, -1).T

    groups: list[list[int]] = []
    if problem.exact:
        index: dict = {}
        for k, vec in enumerate(vectors):
            index.setdefault(tuple(vec), []).append(k)
        groups = list(index.values())
    else:
        reps = np.empty((0, m))
        for k, vec in enumerate(vectors):
            if len(reps):
                dist = np.abs(reps - vec).sum(axis=1)
                hit = np.flatnonzero(dist <= PROB_TOL)
                if len(hit):
                    groups[hit[0]].append(k)
                    continue
            reps = np.vstack([reps, vec])
            groups.append([k])

    classes = []
    for members in groups:
        rep = vectors[members[0]].copy()
        rep.setflags(write=False)
        classes.append(PosteriorClass(rep, tuple(profiles[k] for k in members)))
    classes.sort(key=lambda c: tuple(c.representative.tolist()))
    part = PosteriorPartition(i, r_i, tuple(classes))
    return problem._cache.setdefault(key, part)


def equilibrium_beliefs(problem: AssignmentProblem, i: int, r_i, pi, b_i) -> np.ndarray:
    """Bayes beliefs over ``(theta, b_-i)`` at information set ``(r_i, pi, b_i)``.

    Opponents report truthfully, so only profiles with
    ``rho(b_-i, r_i) == pi`` are possible; their prior weights come from
    the true signal ``b_i``.  Axes: ``(theta, *others)``.
    """
    r_i = problem.signal_index(i, r_i)
    b_i = problem.signal_index(i, b_i)
    part = posterior_partition(problem, i, r_i)
    cls = part.classes[part.locate(pi)]
    joint = problem.prior.joint_given(i, b_i)
    mask = np.zeros(problem.others_shape(i), dtype=bool)
    for b_minus in cls.profiles:
        mask[b_minus] = True
    table = joint * mask[None, ...]
    if table.dtype == object:
        table = as_array(table, True)
    return table / table.sum()
