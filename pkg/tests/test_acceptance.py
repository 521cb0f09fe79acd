"""Acceptance criteria, one summary line each (printed after the run)."""
import itertools
import math
import time
from fractions import Fraction as F

import numpy as np
import pytest

from mechlab.assignment import oracle_solve, solve_qap
from mechlab.game import (
    Strategy,
    accounting_residual,
    opponent_battery,
    play,
    truthful_profile,
    verify_stage1_honesty,
    verify_stage2_dominance,
)
from mechlab.model import validate_problem
from mechlab.probability import expect_tensors
from mechlab.replica import (
    ReplicaFamily,
    build_replica,
    gap_constant,
    ic_threshold,
    max_reward_sum,
    neighbor_rewards,
    nu_bound,
    pairwise_gap,
)
from mechlab.scenario import generate_problem
from mechlab.scoring import RewardSystem, calibrate, incentive_gap
from mechlab.vcg import StageTwoReport, misreport_battery, realized_payoff, stack_reports, truthful_report, vcg

from conftest import record

pytestmark = pytest.mark.acceptance

BINARY = ReplicaFamily([0.5, 0.5], [[0.8, 0.2], [0.4, 0.6]], M=1, seed=7, k=1)
BINARY_EXACT = ReplicaFamily([F(1, 2)] * 2, [[F(4, 5), F(1, 5)], [F(2, 5), F(3, 5)]], M=1, seed=7, k=1)


def rational_posterior(rng, m):
    weights = rng.integers(1, 21, size=m)
    return np.array([F(int(x), int(weights.sum())) for x in weights], dtype=object)


# --- 1 -------------------------------------------------------------------------------


def test_qap_oracle_equivalence():
    start = time.perf_counter()
    mismatches, count, sizes = [], 0, {}
    for k in range(200):
        n, m = 2 + k % 5, 2 + (k // 5) % 2
        rng = np.random.default_rng(1000 + k)
        problem = generate_problem(n, m, 2, seed=1000 + k, density=0.5, exact=True)
        w, d, kappa = expect_tensors(problem, rational_posterior(rng, m))
        assert (d != 0).any()
        sol = solve_qap(w, d, kappa)
        match, value, _ = oracle_solve(w, d, kappa)
        if not (isinstance(sol.value, F) and sol.value == value and sol.matching == match):
            mismatches.append(k)
        count += 1
        sizes[n] = sizes.get(n, 0) + 1
    elapsed = time.perf_counter() - start
    ok = not mismatches and elapsed < 60
    record("1 QAP oracle equivalence", ok,
           f"{count} rational instances (n counts {sizes}), {len(mismatches)} mismatches, {elapsed:.1f}s (< 60s)")
    assert not mismatches and elapsed < 60


# --- 2 -------------------------------------------------------------------------------


def test_vcg_dsic_ir_nonpositive():
    dsic = ir = neg = 0
    checked = 0
    worst_gain = -np.inf
    for k in range(100):
        n, m = 2 + k % 3, 2 + k % 2
        rng = np.random.default_rng(2000 + k)
        problem = generate_problem(n, m, 2, seed=2000 + k, density=0.6)
        pi = rng.dirichlet(np.ones(m))
        kappa = expect_tensors(problem, pi)[2]
        if k % 2:
            others = [truthful_report(problem, j) for j in range(n)]
        else:
            others = [StageTwoReport(rng.uniform(0, 1, (n, m)), rng.uniform(0, 0.5, (n, n, n, m))) for _ in range(n)]
        for i in range(n):
            truth = truthful_report(problem, i)
            tw, td = truth.at(pi)
            reports = list(others)
            reports[i] = truth
            res = vcg(*stack_reports(reports, pi), kappa)
            honest = realized_payoff(tw, td, kappa, res, i)
            ir += res.buyer_net[i] < -1e-9
            neg += sum(x > 1e-9 for x in res.transfers)
            battery = misreport_battery(truth, rng, 50, problem.M)
            assert len(battery) >= 50
            for lie in battery:
                reports[i] = lie
                lied = vcg(*stack_reports(reports, pi), kappa)
                neg += sum(x > 1e-9 for x in lied.transfers)
                gain = realized_payoff(tw, td, kappa, lied, i) - honest
                worst_gain = max(worst_gain, gain)
                dsic += gain > 1e-9
                checked += 1
    ok = dsic == ir == neg == 0
    record("2 VCG DSIC/IR/nonpositive transfers", ok,
           f"100 instances, {checked} misreports; violations DSIC={dsic} IR={ir} x>0={neg}; "
           f"max misreport gain {worst_gain:.3g}")
    assert ok


# --- 3 -------------------------------------------------------------------------------


def test_lipschitz_bounds():
    viol_a = viol_b = 0
    slack_a = slack_b = np.inf
    pairs = 0
    for k in range(20):
        n, m = 2 + k % 3, 2 + k % 2
        problem = generate_problem(n, m, 2, seed=3000 + k, density=0.5)
        M = problem.M
        rng = np.random.default_rng(3000 + k)
        for _ in range(1000):
            pa, pb = rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(m))
            ra, rb = vcg(*expect_tensors(problem, pa)), vcg(*expect_tensors(problem, pb))
            dist = np.abs(pa - pb).sum()
            bound_a = (2 + n) * n * M * dist
            bound_b = (2 + n) * 2 * n * M * dist
            diff_a = abs(ra.outcome.value - rb.outcome.value)
            diff_b = max(abs(x - y) for x, y in zip(ra.buyer_net, rb.buyer_net))
            viol_a += diff_a > bound_a + 1e-12
            viol_b += diff_b > bound_b + 1e-12
            if dist > 0:
                slack_a = min(slack_a, (bound_a - diff_a) / dist)
                slack_b = min(slack_b, (bound_b - diff_b) / dist)
            pairs += 1
    ok = viol_a == viol_b == 0
    record("3 Lipschitz bounds", ok,
           f"{pairs} pairs on 20 instances; violations (2+n)nM: {viol_a}, (2+n)2nM: {viol_b}; "
           f"min slack per unit distance {slack_a:.3g} / {slack_b:.3g}")
    assert ok


# --- 4 -------------------------------------------------------------------------------


def test_scoring_gap():
    bad_gap = triples = 0
    for k in range(60):
        n = 2 + k % 2
        sizes = [2 + (k + i) % 2 for i in range(n)]
        problem = generate_problem(n, 2 + k % 2, sizes, seed=4000 + k, exact=bool(k % 3 == 0))
        assert validate_problem(problem).passed
        for i in range(n):
            for b, r in itertools.permutations(range(sizes[i]), 2):
                bad_gap += not incentive_gap(problem, i, b, r) > 0
                triples += 1
    families = [BINARY]
    rng = np.random.default_rng(4)
    for X in (2, 3, 4):
        for m in (2, 3):
            families += [ReplicaFamily(rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(X), size=m)) for _ in range(15)]
    bad_k = pairs = 0
    worst_ratio = np.inf
    for fam in families:
        phat = fam.phat()
        K = gap_constant(fam.size)
        for b, r in itertools.permutations(range(fam.size), 2):
            gap = pairwise_gap(phat, b, r)
            need = K * np.abs(phat[b] - phat[r]).sum() ** 2
            bad_k += not (gap > 0 and gap >= need)
            worst_ratio = min(worst_ratio, gap / need)
            pairs += 1
    ok = bad_gap == 0 and bad_k == 0
    record("4 scoring gap", ok,
           f"{triples} (i, b_i, r_i) triples on 60 instances, {bad_gap} nonpositive; "
           f"{pairs} replica pairs, {bad_k} below K bound (min gap/bound {worst_ratio:.3g})")
    assert ok


# --- 5 -------------------------------------------------------------------------------


def test_sequential_dominance_end_to_end():
    start = time.perf_counter()
    s1_fail = s2_fail = 0
    cells1 = cells2 = 0
    min_cands = np.inf
    ratios = []
    opponents = None
    for k in range(20):
        n, m = 2 + k % 2, 2 + (k // 2) % 2
        problem = generate_problem(n, m, 2, seed=5000 + k, density=0.5)
        cal = calibrate(problem)
        rewards = RewardSystem.spherical(cal.delta)
        battery2 = opponent_battery(problem, seed=k, stage=2)
        opponents = sum(p.name != "truthful" for p in battery2)
        s1 = verify_stage1_honesty(problem, rewards, seed=k, min_candidates=200)
        s2 = verify_stage2_dominance(problem, rewards, battery2, seed=k, misreports=50)
        s1_fail += len(s1.violations)
        s2_fail += len(s2.violations)
        cells1 += len(s1.cells)
        cells2 += len(s2.cells)
        min_cands = min(min_cands, min(c["min_class_candidates"] for c in s1.cells))
        ratios.append(s1.summary["empirical_min_delta"] / cal.delta)
    elapsed = time.perf_counter() - start
    ok = s1_fail == 0 and s2_fail == 0 and min_cands >= 200 and opponents >= 10 and elapsed <= 600
    record("5 two-stage honesty end to end", ok,
           f"20 instances; stage 1: {cells1} cells, {s1_fail} violations, >= {min_cands} candidates per posted "
           f"posterior; stage 2: {cells2} cells against {opponents} non-truthful policies, {s2_fail} violations; "
           f"empirical/calibrated delta <= {max(ratios):.3g}; {elapsed:.0f}s (<= 600s)")
    assert ok


# --- 6 -------------------------------------------------------------------------------

N_RANGE = range(2, 13)


@pytest.fixture(scope="module")
def replica_data():
    start = time.perf_counter()
    over = 0
    sums = {}
    for n in N_RANGE:
        best = 0
        for b in itertools.product(range(2), repeat=n):
            s = sum(neighbor_rewards(BINARY_EXACT, n, b))
            over += s > F(1, n**2)
            best = max(best, s)
        sums[n] = best
        assert float(best) == pytest.approx(max_reward_sum(BINARY, n), rel=1e-12)
    nu = {n: nu_bound(BINARY, n) for n in N_RANGE}
    thr = ic_threshold(BINARY, 1, N_RANGE)
    elapsed = time.perf_counter() - start
    extended = ic_threshold(BINARY, 1, range(250, 451, 10))
    return {"over": over, "sums": sums, "nu": nu, "threshold": thr, "extended": extended, "elapsed": elapsed}


def replica_checks(data):
    ns = list(N_RANGE)
    deficit = [n * float(data["sums"][n]) for n in ns]
    nu = [data["nu"][n] for n in ns]
    tail = [n for n in ns if n >= 6]
    slope = np.polyfit(np.log(tail), np.log([data["nu"][n] for n in tail]), 1)[0]
    rises = [(a, b) for a, b in zip(ns, ns[1:]) if data["nu"][b] > data["nu"][a]]
    return {
        "bound": data["over"] == 0,
        "deficit": all(a > b for a, b in zip(deficit, deficit[1:])) and all(d <= 1 / n for d, n in zip(deficit, ns)),
        "nu_monotone": not rises,
        "slope": slope <= -1 + 0.5,
        "runtime": data["elapsed"] <= 300,
        "_slope": slope,
        "_rises": rises,
        "_deficit": deficit,
        "_nu": nu,
    }


def test_replica_sum_bound(replica_data):
    assert replica_data["over"] == 0


def test_replica_deficit_decreasing(replica_data):
    assert replica_checks(replica_data)["deficit"]


def test_replica_nu_slope(replica_data):
    assert replica_checks(replica_data)["slope"]


def test_replica_nu_non_increasing(replica_data):
    checks = replica_checks(replica_data)
    assert checks["nu_monotone"], f"nu increases at {checks['_rises']}"


def test_replica_summary(replica_data):
    c = replica_checks(replica_data)
    n_hat = replica_data["threshold"]["n_hat"]
    worst = min(m for _, m in replica_data["threshold"]["curve"])
    ok = all(c[k] for k in ("bound", "deficit", "nu_monotone", "slope", "runtime"))
    record("6 replica deficit and nu decay", ok,
           f"sum xi <= 1/n^2 on all profiles: {c['bound']}; n*max sum xi decreasing to "
           f"{c['_deficit'][-1]:.3g}: {c['deficit']}; nu non-increasing: {c['nu_monotone']} "
           f"(rises at n pairs {c['_rises']}); log-log slope over 6..12 = {c['_slope']:.3f} (<= -0.5): "
           f"{c['slope']}; IC threshold n_hat in 2..12: {'not reached' if n_hat is None else n_hat} "
           f"(worst margin {worst:.3g}), in 250..450 step 10: {replica_data['extended']['n_hat']}; {replica_data['elapsed']:.0f}s (<= 300s)")
    assert ok


# --- 7 -------------------------------------------------------------------------------


def test_accounting_identity_exact():
    runs = nonzero = 0
    problems = [generate_problem(2 + k % 2, 2 + k % 2, 2, seed=7000 + k, density=0.5, exact=True) for k in range(12)]
    problems += [build_replica(BINARY_EXACT, n) for n in (2, 3)]
    for k, problem in enumerate(problems):
        n = problem.n
        rng = np.random.default_rng(k)
        rewards = RewardSystem.spherical(calibrate(problem).delta)
        inflate = Strategy(beta=lambda p, i, r, pi, b: StageTwoReport(p.u[i] * 2, p.c[i]), name="inflate")
        liar = Strategy(alpha=(1, 0), beta=lambda p, i, r, pi, b: StageTwoReport(p.u[i] * pi[0], p.c[i] * 0))
        shuffle = Strategy(alpha=(1, 1))
        profiles = [truthful_profile(n), [liar] + truthful_profile(n - 1), [inflate, shuffle] + [liar] * (n - 2)]
        profiles.append([Strategy(alpha=tuple(rng.integers(0, 2, 2).tolist())) for _ in range(n)])
        for strategies in profiles:
            for b in problem.profiles():
                run = play(problem, rewards, strategies, b)
                res = accounting_residual(run)
                assert isinstance(res, F)
                nonzero += res != 0
                runs += 1
    record("7 exact accounting identity", nonzero == 0, f"{runs} rational runs, {nonzero} with nonzero residual")
    assert nonzero == 0
