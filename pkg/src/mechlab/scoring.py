"""Stage-1 spherical scoring-rule rewards and the calibration of their scale."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._arith import PROB_TOL, l2, to_fraction
from .model import AssignmentProblem
from .probability import posteriors_given, signal_marginal

DEFAULT_MARGIN = 0.01
DEFAULT_FLOOR = 1e-6


class CalibrationError(ValueError):
    """Some pair of own signals yields no strict scoring incentive."""


def _num(problem: AssignmentProblem, x):
    return to_fraction(x) if problem.exact else float(x)


def _split(problem: AssignmentProblem, i: int, b):
    b = problem.profile(b)
    return b[i], b[:i] + b[i + 1:]


def spherical_reward(problem: AssignmentProblem, delta, i: int, b):
    """``delta * P_-i(b_-i | b_i) / ||P_-i(. | b_i)||_2``."""
    b_i, b_minus = _split(problem, i, b)
    marg = signal_marginal(problem, i, b_i)
    return _num(problem, delta) * marg[b_minus] / l2(marg)


def neighbor_reward(phat: np.ndarray, k: int, i: int, b):
    """``n^-(k+2) * Phat(b_{i+1} | b_i) / ||Phat(. | b_i)||_2``, cyclic in i."""
    n = len(b)
    row = phat[b[i]]
    nxt = b[(i + 1) % n]
    scale = Fraction(1, n ** (k + 2)) if phat.dtype == object else 1.0 / n ** (k + 2)
    return scale * row[nxt] / l2(row)


@dataclass(frozen=True, eq=False)
class RewardSystem:
    """Stage-1 reward rule: spherical with scale ``delta``, the cyclic
    neighbor rule with exponent ``k`` (needs ``phat``), or none."""

    kind: str
    delta: object = None
    k: int | None = None
    phat: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "spherical":
            if self.delta is None or self.delta < 0:
                raise ValueError("spherical rewards need delta >= 0")
        elif self.kind == "neighbor":
            if self.k is None or self.k < 1 or self.phat is None:
                raise ValueError("neighbor rewards need k >= 1 and the pairwise conditional")
        elif self.kind != "zero":
            raise ValueError(f"unknown reward kind {self.kind!r}")

    @classmethod
    def spherical(cls, delta) -> RewardSystem:
        return cls("spherical", delta=delta)

    @classmethod
    def neighbor(cls, k: int, phat) -> RewardSystem:
        return cls("neighbor", k=k, phat=np.asarray(phat))

    @classmethod
    def zero(cls) -> RewardSystem:
        return cls("zero")

    def reward(self, problem: AssignmentProblem, i: int, b):
        if self.kind == "spherical":
            return spherical_reward(problem, self.delta, i, b)
        if self.kind == "neighbor":
            return neighbor_reward(self.phat, self.k, i, problem.profile(b))
        return Fraction(0) if problem.exact else 0.0

    def rewards(self, problem: AssignmentProblem, b) -> tuple:
        return tuple(self.reward(problem, i, b) for i in range(problem.n))

    def table(self, problem: AssignmentProblem) -> np.ndarray:
        """``(n, *sizes)`` array of all rewards."""
        out = np.empty((problem.n,) + problem.sizes, dtype=object if problem.exact else float)
        for b in problem.profiles():
            for i, x in enumerate(self.rewards(problem, b)):
                out[(i,) + b] = x
        return out

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "spherical":
            out["delta"] = float(self.delta)
        if self.kind == "neighbor":
            out["k"] = self.k
        return out


def incentive_gap(problem: AssignmentProblem, i: int, b_i, r_i):
    """Expected spherical reward (delta = 1) of reporting b_i over r_i, given b_i."""
    b_i, r_i = problem.signal_index(i, b_i), problem.signal_index(i, r_i)
    if b_i == r_i:
        return Fraction(0) if problem.exact else 0.0
    p_b = signal_marginal(problem, i, b_i).ravel()
    p_r = signal_marginal(problem, i, r_i).ravel()
    if problem.exact:
        return l2(p_b) - sum(x * y for x, y in zip(p_r, p_b)) / l2(p_r)
    return float(l2(p_b) - np.dot(p_r, p_b) / l2(p_r))


def posterior_shift(problem: AssignmentProblem, i: int, b_i, r_i):
    """``sum_{b_-i} ||rho(b_-i, b_i) - rho(b_-i, r_i)||_1 P_-i(b_-i | b_i)``."""
    b_i, r_i = problem.signal_index(i, b_i), problem.signal_index(i, r_i)
    if b_i == r_i:
        return Fraction(0) if problem.exact else 0.0
    diff = posteriors_given(problem, i, b_i) - posteriors_given(problem, i, r_i)
    dist = np.abs(diff).sum(axis=0)
    if not problem.exact:
        dist = np.where(dist <= PROB_TOL, 0.0, dist)  # same posterior class
    total = (dist * signal_marginal(problem, i, b_i)).sum()
    return total if problem.exact else float(total)


def lipschitz_factor(n: int, M):
    """``(2+n)(2n+1)M``: sup change of payoff plus transfer per unit posterior shift."""
    return (2 + n) * (2 * n + 1) * M


def deviation_bound(problem: AssignmentProblem, i: int, b_i, r_i):
    """Upper bound on what a stage-1 lie can gain through the posted posterior."""
    return lipschitz_factor(problem.n, problem.M) * posterior_shift(problem, i, b_i, r_i)


@dataclass(frozen=True)
class Calibration:
    delta: object
    binding: tuple | None  # (i, b_i, r_i), 0-based
    gap: object
    bound: object

    def to_json(self, problem: AssignmentProblem | None = None) -> dict:
        triple = None
        if self.binding is not None:
            i, b, r = self.binding
            if problem is not None:
                b, r = problem.signal_sets[i][b], problem.signal_sets[i][r]
            triple = {"buyer": i + 1, "signal": b, "report": r}
        return {
            "delta": float(self.delta),
            "binding_triple": triple,
            "gap": None if self.gap is None else float(self.gap),
            "bound": None if self.bound is None else float(self.bound),
        }


def calibrate(problem: AssignmentProblem, margin=DEFAULT_MARGIN, floor=DEFAULT_FLOOR) -> Calibration:
    """Smallest certified scale, inflated by ``1 + margin``, with its binding triple."""
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    margin, floor = _num(problem, margin), _num(problem, floor)
    best = None
    for i in range(problem.n):
        for b_i in range(problem.sizes[i]):
            for r_i in range(problem.sizes[i]):
                if r_i == b_i:
                    continue
                gap = incentive_gap(problem, i, b_i, r_i)
                if not gap > 0:
                    raise CalibrationError(
                        f"no scoring incentive for buyer {i + 1}: signals "
                        f"{problem.signal_sets[i][b_i]!r} and {problem.signal_sets[i][r_i]!r}"
                    )
                bound = deviation_bound(problem, i, b_i, r_i)
                ratio = bound / gap
                if best is None or ratio > best[0]:
                    best = (ratio, (i, b_i, r_i), gap, bound)
    if best is None or not best[0] > 0:
        triple = None if best is None else best[1]
        return Calibration(floor, triple, None if best is None else best[2], None if best is None else best[3])
    ratio, triple, gap, bound = best
    return Calibration((1 + margin) * ratio, triple, gap, bound)


def calibrate_delta(problem: AssignmentProblem, margin=DEFAULT_MARGIN, floor=DEFAULT_FLOOR):
    """Scale making the reward gap beat the deviation bound for every lie."""
    return calibrate(problem, margin, floor).delta


def expected_truthful_reward(problem: AssignmentProblem, delta, i: int, b_i):
    """``delta * ||P_-i(. | b_i)||_2`` (spherical score identity)."""
    return _num(problem, delta) * l2(signal_marginal(problem, i, b_i))


__all__ = [
    "CalibrationError",
    "Calibration",
    "RewardSystem",
    "calibrate",
    "calibrate_delta",
    "deviation_bound",
    "expected_truthful_reward",
    "incentive_gap",
    "lipschitz_factor",
    "neighbor_reward",
    "posterior_shift",
    "spherical_reward",
]
