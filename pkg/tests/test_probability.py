from fractions import Fraction as F

import numpy as np
import pytest

from mechlab.priors import DensePrior, ProductPrior
from mechlab.probability import (
    StateDistribution,
    equilibrium_beliefs,
    expect_tensors,
    posterior,
    posterior_partition,
    posteriors_given,
    signal_marginal,
    state_given_signal,
)
from mechlab.scenario import generate_problem

from conftest import make_problem

LAM = np.array([0.5, 0.5])
Q = np.array([[0.8, 0.2], [0.4, 0.6]])


def binary_problem(n=2, exact=False):
    lam = np.array([F(1, 2)] * 2, dtype=object) if exact else LAM
    q = np.array([[F(4, 5), F(1, 5)], [F(2, 5), F(3, 5)]], dtype=object) if exact else Q
    table = ProductPrior(lam, q, n).table()
    z = np.zeros((n, n, 2), dtype=object if exact else float)
    if exact:
        z[...] = F(0)
    return make_problem(z, table=table)


def test_independent_states_give_prior_marginal():
    table = np.einsum("t,x,y->txy", [0.3, 0.7], [0.4, 0.6], [0.5, 0.5])
    problem = make_problem(np.zeros((2, 2, 2)), table=table)
    for b in problem.profiles():
        assert np.allclose(posterior(problem, b).probs, [0.3, 0.7], atol=1e-15)


def test_single_buyer_bayes():
    table = (LAM[:, None] * Q)  # n = 1
    problem = make_problem(np.zeros((1, 1, 2)), table=table)
    assert np.allclose(posterior(problem, (0,)).probs, [2 / 3, 1 / 3], atol=1e-15)


def test_posteriors_strictly_positive():
    problem = generate_problem(3, 3, 2, seed=4)
    for b in problem.profiles():
        assert (posterior(problem, b).probs > 0).all()


def test_invalid_signal_label():
    problem = binary_problem()
    with pytest.raises(ValueError):
        posterior(problem, ("nope", "s0"))
    with pytest.raises(ValueError):
        signal_marginal(problem, 5, 0)


def test_uniform_prior_gives_uniform_marginal():
    problem = make_problem(np.zeros((3, 3, 2)), table=np.full((2, 2, 2, 2), 1 / 16))
    assert np.allclose(signal_marginal(problem, 0, 1), 0.25)


def test_conditionally_independent_marginal_matches_dense_sum():
    problem = binary_problem(3)
    marg = signal_marginal(problem, 1, 0)
    # mixture of products: sum_theta P(theta | b_2 = x1) Q(.|theta) Q(.|theta)
    post = LAM * Q[:, 0] / (LAM * Q[:, 0]).sum()
    expected = np.einsum("t,tx,ty->xy", post, Q, Q)
    assert np.allclose(marg, expected, atol=1e-15)


def test_two_buyer_marginal_exact():
    problem = binary_problem(2, exact=True)
    # P(b_2 = x1 | b_1 = x1) = (0.64 * .5 + 0.16 * .5) / 0.6
    assert list(signal_marginal(problem, 0, 0)) == [F(2, 3), F(1, 3)]
    # (0.5 * 0.2 * 0.8 + 0.5 * 0.6 * 0.4) / 0.4
    assert list(signal_marginal(problem, 0, 1)) == [F(1, 2), F(1, 2)]


def test_expect_tensors_point_uniform_and_dot():
    problem = generate_problem(3, 3, 2, seed=9)
    w, d, k = expect_tensors(problem, StateDistribution.point(3, 1))
    assert (w == problem.u[..., 1]).all() and (d == problem.c[..., 1]).all() and (k == problem.v[..., 1]).all()
    pi = np.random.default_rng(0).dirichlet(np.ones(3))
    w, d, k = expect_tensors(problem, pi)
    for idx in np.ndindex(problem.c.shape[:-1]):
        assert d[idx] == pytest.approx(sum(problem.c[idx + (t,)] * pi[t] for t in range(3)), abs=1e-15)
    assert w.max() <= problem.M and w.min() >= 0


def test_expect_uniform_two_states():
    problem = generate_problem(2, 2, 2, seed=1)
    w, _, _ = expect_tensors(problem, StateDistribution.uniform(2))
    assert np.allclose(w, (problem.u[..., 0] + problem.u[..., 1]) / 2)


def test_state_distribution_rejects_bad_vectors():
    with pytest.raises(ValueError):
        StateDistribution(np.array([0.6, 0.6]))
    with pytest.raises(ValueError):
        StateDistribution(np.array([1.2, -0.2]))


def test_law_of_total_probability():
    problem = generate_problem(3, 2, [2, 3, 2], seed=2)
    for i in range(3):
        for b_i in range(problem.sizes[i]):
            post = posteriors_given(problem, i, b_i)
            marg = signal_marginal(problem, i, b_i)
            mixed = (post * marg[None]).reshape(problem.m, -1).sum(axis=1)
            assert np.allclose(mixed, state_given_signal(problem, i, b_i), atol=1e-10)


def test_partition_single_class_when_posterior_ignores_opponents():
    # opponent signal independent of the state
    table = np.einsum("tx,y->txy", LAM[:, None] * Q, [0.3, 0.7])
    part = posterior_partition(make_problem(np.zeros((2, 2, 2)), table=table), 0, 0)
    assert len(part) == 1 and len(part.classes[0].profiles) == 2


def test_partition_singletons_when_posteriors_distinct():
    part = posterior_partition(binary_problem(2), 0, 0)
    assert len(part) == 2
    assert sorted(len(c.profiles) for c in part.classes) == [1, 1]


@pytest.mark.parametrize("exact", [False, True])
def test_partition_groups_equal_counts(exact):
    problem = binary_problem(4, exact)
    part = posterior_partition(problem, 0, 1)
    assert len(part) == 4  # zero to three opponents holding x1
    for cls in part.classes:
        assert len({sum(1 for x in b if x == 0) for b in cls.profiles}) == 1
    flat = sorted(b for c in part.classes for b in c.profiles)
    assert flat == sorted(np.ndindex(2, 2, 2))


def test_partition_invariant_under_relabeling():
    problem = binary_problem(3)
    swapped = make_problem(np.zeros((3, 3, 2)), table=problem.prior.table()[:, :, ::-1, :])
    a, b = posterior_partition(problem, 0, 0), posterior_partition(swapped, 0, 0)
    relabel = {(x, y): (1 - x, y) for x in range(2) for y in range(2)}
    assert len(a) == len(b)
    assert {frozenset(relabel[p] for p in c.profiles) for c in a.classes} == {frozenset(c.profiles) for c in b.classes}


def test_beliefs_single_class_equal_joint():
    table = np.einsum("tx,y->txy", LAM[:, None] * Q, [0.3, 0.7])
    problem = make_problem(np.zeros((2, 2, 2)), table=table)
    pi = posterior_partition(problem, 0, 1).classes[0].representative
    mu = equilibrium_beliefs(problem, 0, 1, pi, 0)
    joint = table[:, 0, :] / table[:, 0, :].sum()
    assert np.allclose(mu, joint, atol=1e-15)


def test_beliefs_singleton_class_is_posterior_on_profile():
    problem = binary_problem(2)
    part = posterior_partition(problem, 0, 1)
    for cls in part.classes:
        (b_minus,) = cls.profiles
        mu = equilibrium_beliefs(problem, 0, 1, cls.representative, 0)
        assert mu.sum() == pytest.approx(1)
        assert np.allclose(mu[:, b_minus[0]], posterior(problem, (0, b_minus[0])).probs)
        assert mu[:, 1 - b_minus[0]].sum() == 0


def test_beliefs_two_class_exact():
    problem = binary_problem(3, exact=True)
    part = posterior_partition(problem, 0, 0)
    k = part.class_of((0, 1))
    mu = equilibrium_beliefs(problem, 0, 0, part.classes[k].representative, 1)
    # event {(x1, x2), (x2, x1)} given b_1 = x2: weights lam Q(x2) Q(x1) Q(x2), symmetric
    w = {0: F(1, 2) * F(1, 5) * F(4, 5) * F(1, 5), 1: F(1, 2) * F(3, 5) * F(2, 5) * F(3, 5)}
    total = 2 * (w[0] + w[1])
    assert mu[0, 0, 1] == w[0] / total and mu[1, 1, 0] == w[1] / total
    assert mu[:, 0, 0].sum() == 0 and mu.sum() == 1
    # theta-marginal summed over the event equals the conditional of P_-i(. | b_i) on it
    marg = signal_marginal(problem, 0, 1)
    event = marg[0, 1] + marg[1, 0]
    assert mu[:, 0, 1].sum() == marg[0, 1] / event


def test_beliefs_reject_unattained_posterior():
    problem = binary_problem(2)
    with pytest.raises(ValueError):
        equilibrium_beliefs(problem, 0, 0, [0.5, 0.5], 0)


def test_dense_and_product_priors_agree_exactly():
    lam = np.array([F(1, 3), F(2, 3)], dtype=object)
    q = np.array([[F(1, 2), F(1, 3), F(1, 6)], [F(1, 5), F(2, 5), F(2, 5)]], dtype=object)
    for n in range(2, 6):
        prod = ProductPrior(lam, q, n)
        dense = DensePrior(prod.table())
        for i in range(n):
            for x in range(3):
                assert (prod.joint_given(i, x) == dense.joint_given(i, x)).all()
