"""One-shot VCG mechanism on expected (posted-posterior) payoffs."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._arith import as_array, to_fraction
from .assignment import QapSolution, prepare, solve_qap, solve_qap_excluding
from .model import AssignmentProblem, buyer_payoffs
from .probability import _probs, expect


@dataclass(frozen=True, eq=False)
class VcgResult:
    outcome: QapSolution
    transfers: tuple
    buyer_net: tuple
    excluded_values: tuple  # optimum over Z_-i for each i

    @property
    def matching(self):
        return self.outcome.matching

    def to_json(self) -> dict:
        out = self.outcome.to_json()
        out["transfers"] = [float(x) for x in self.transfers]
        out["buyer_net"] = [float(x) for x in self.buyer_net]
        return out


def efficient_outcome(w, d, kappa, **kw) -> QapSolution:
    """``phi_hat(w, d)``; see :func:`mechlab.assignment.solve_qap`."""
    return solve_qap(w, d, kappa, **kw)


def vcg_transfer(w, d, kappa, i: int, outcome: QapSolution | None = None, **kw):
    """``x_i`` = others' payoff at the optimum minus their best without i."""
    n = np.asarray(w).shape[0]
    if not 0 <= i < n:
        raise ValueError(f"buyer index {i} out of range")
    if outcome is None:
        outcome = solve_qap(w, d, kappa, **kw)
    others = outcome.value - outcome.per_buyer[i]
    return others - solve_qap_excluding(w, d, kappa, n, i, **kw).value


def vcg(w, d, kappa, **kw) -> VcgResult:
    """Efficient outcome plus all transfers, from one tie-broken optimum."""
    w, d, kappa, _ = prepare(w, d, kappa)
    n = w.shape[0]
    outcome = solve_qap(w, d, kappa, **kw)
    excluded = tuple(solve_qap_excluding(w, d, kappa, n, i, **kw).value for i in range(n))
    transfers = tuple(outcome.value - outcome.per_buyer[i] - excluded[i] for i in range(n))
    net = tuple(g + x for g, x in zip(outcome.per_buyer, transfers))
    return VcgResult(outcome, transfers, net, excluded)


# --- stage-2 reports and settlement -------------------------------------------


@dataclass(frozen=True, eq=False)
class StageTwoReport:
    """Buyer's claimed state-dependent valuations ``w[j, theta]`` and
    externalities ``d[j, p, q, theta]``."""

    w: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        w, d = np.asarray(self.w), np.asarray(self.d)
        exact = w.dtype == object or d.dtype == object
        w, d = as_array(w, exact), as_array(d, exact)
        if w.ndim != 2 or d.ndim != 4 or d.shape != (w.shape[0],) * 3 + (w.shape[1],):
            raise ValueError(f"malformed report: w {w.shape}, d {d.shape}")
        if (d < 0).any():
            raise ValueError("reported externalities must be nonnegative")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "d", d)

    @property
    def exact(self) -> bool:
        return self.w.dtype == object

    def at(self, pi):
        """Expected ``(w_i(pi), d_i(pi))``."""
        p = _probs(pi)
        if p.shape != (self.w.shape[1],):
            raise ValueError("report and posterior disagree on the number of states")
        return expect(self.w, p), expect(self.d, p)

    def to_json(self) -> dict:
        return {"w": as_array(self.w, False).tolist(), "d": as_array(self.d, False).tolist()}


def truthful_report(problem: AssignmentProblem, i: int) -> StageTwoReport:
    return StageTwoReport(problem.u[i], problem.c[i])


def stack_reports(reports, pi):
    """Reported expectations stacked into ``(n, n)`` and ``(n, n, n, n)``."""
    pairs = [r.at(pi) for r in reports]
    exact = any(r.exact for r in reports)
    w = as_array(np.stack([a for a, _ in pairs]), exact)
    d = as_array(np.stack([b for _, b in pairs]), exact)
    return w, d


@dataclass(frozen=True, eq=False)
class Settlement:
    pi: np.ndarray
    w: np.ndarray
    d: np.ndarray
    kappa: np.ndarray
    result: VcgResult
    buyer_payments: tuple  # buyer i -> its seller
    seller_receipts: tuple  # seller j <- its buyer

    def to_json(self) -> dict:
        out = self.result.to_json()
        out["posterior"] = [float(x) for x in self.pi]
        out["buyer_payments"] = [float(x) for x in self.buyer_payments]
        out["seller_receipts"] = [float(x) for x in self.seller_receipts]
        return out


def stage2_settle(problem: AssignmentProblem, pi, reports, **kw) -> Settlement:
    """Run VCG on reports mixed at the posted ``pi``; buyers pay ``v_ij(pi)``."""
    p = _probs(pi)
    if problem.exact:
        p = as_array(p, True)
    if len(reports) != problem.n:
        raise ValueError(f"need {problem.n} stage-2 reports, got {len(reports)}")
    for r in reports:
        if r.w.shape != (problem.n, problem.m):
            raise ValueError(f"malformed report: w {r.w.shape}")
    w, d = stack_reports(reports, p)
    kappa = expect(problem.v, p)
    result = vcg(w, d, kappa, **kw)
    zero = Fraction(0) if problem.exact else 0.0
    paid = [zero] * problem.n
    received = [zero] * problem.n
    for i, j in result.matching.pairs():
        paid[i] = kappa[i, j]
        received[j] = kappa[i, j]
    return Settlement(p, w, d, kappa, result, tuple(paid), tuple(received))


def realized_payoff(true_w_i, true_d_i, kappa, result: VcgResult, i: int):
    """Buyer i's expected payoff ``g_i(phi_hat; true values) + x_i``."""
    n = len(true_w_i)
    w = np.zeros((n, n), dtype=object if np.asarray(true_w_i).dtype == object else float)
    d = np.zeros((n, n, n, n), dtype=w.dtype)
    w[i] = true_w_i
    d[i] = true_d_i
    g = buyer_payoffs(result.matching, w, d, kappa)[i]
    return g + result.transfers[i]


# --- misreports -----------------------------------------------------------------


def _ratio(x: float, exact: bool):
    return Fraction(round(x * 1000), 1000) if exact else x


def _uniform(rng, lo, hi, shape, exact: bool) -> np.ndarray:
    draw = rng.uniform(lo, hi, shape)
    if not exact:
        return draw
    out = np.empty(draw.shape, dtype=object)
    out.ravel()[:] = [_ratio(float(x), True) for x in draw.ravel()]
    return out


def misreport_battery(truth: StageTwoReport, rng: np.random.Generator, size: int = 50, M=1.0) -> list:
    """Deterministic-given-rng list of at least ``size`` misreports of ``truth``.

    Covers scalings x{0, 0.5, 2}, seller permutations, zeroed and inflated
    externalities, then random perturbations and random reports.
    """
    exact = truth.exact
    w, d = truth.w, truth.d
    n = w.shape[0]
    M = to_fraction(M) if exact else float(M)
    half, two = (Fraction(1, 2), 2) if exact else (0.5, 2.0)
    out = [StageTwoReport(w * 0, d), StageTwoReport(w * half, d), StageTwoReport(w * two, d)]
    out.append(StageTwoReport(w * two, d * 0))
    out.append(StageTwoReport(w, d * 0))
    out.append(StageTwoReport(w, d * two))
    out.append(StageTwoReport(w, d + M))
    out.append(StageTwoReport(w * 0, d + M))
    for shift in range(1, n):
        perm = np.roll(np.arange(n), shift)
        out.append(StageTwoReport(w[perm], d[perm]))
    if n > 1:
        rev = np.arange(n)[::-1]
        out.append(StageTwoReport(w[rev], d[rev]))
    for j in range(n):  # bid everything on seller j
        target = w * 0
        target[j] = w[j] * 0 + 2 * M
        out.append(StageTwoReport(target, d))
    while len(out) < size:
        kind = len(out) % 3
        if kind == 0:
            wn = w + _uniform(rng, -0.5, 0.5, w.shape, exact) * M
            wn = np.where(wn < 0, wn * 0, wn)
            out.append(StageTwoReport(wn, d))
        elif kind == 1:
            scale = _ratio(float(rng.uniform(0, 3)), exact)
            dn = d * _ratio(float(rng.uniform(0, 3)), exact)
            out.append(StageTwoReport(w * scale, dn))
        else:
            wr = _uniform(rng, 0, 2, w.shape, exact) * M
            dr = _uniform(rng, 0, 1, d.shape, exact) * M
            out.append(StageTwoReport(wr, dr))
    return out
