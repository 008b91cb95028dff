import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from araclf.abacra import (ABCConfig, ABCFailure, EmpiricalModel, ProductBernoulli, abc_sample_origin,
                           exact_origin_posterior, expected_utilities, fit_feature_model, origin_samples,
                           robust_classify, summary_distance)
from araclf.attacker import AttackerProbModel, AttackerUtilitySpec, AttackSimulator
from araclf.classifiers import MRModel, predict_proba
from araclf.origins import INVERSE_DISTANCE, UNIFORM, heuristic_origin


def small_problem(d=4, k=2, l=1, seed=0, worst_case=False, variance_fraction=0.1):
    rng = np.random.default_rng(seed)
    model = MRModel(rng.normal(0, 1.5, size=(k, d)), rng.normal(size=k))
    pred = lambda X: predict_proba(model, X)  # noqa: E731
    spec = AttackerUtilitySpec.constant(k, l, 0.7, None if worst_case else variance_fraction)
    pm = AttackerProbModel(m_samples=None, worst_case=worst_case, variance_fraction=variance_fraction)
    return model, AttackSimulator(pred, spec, pm)


def tv_distance(samples, dist):
    keys = [row.tobytes() for row in dist.support]
    emp = {k: 0.0 for k in keys}
    for row in samples:
        kb = row.tobytes()
        emp[kb] = emp.get(kb, 0.0) + 1.0 / len(samples)
    exact = dict(zip(keys, dist.weights))
    return 0.5 * sum(abs(emp.get(k, 0.0) - exact.get(k, 0.0)) for k in set(emp) | set(exact))


# -- heuristics ----------------------------------------------------------------


def test_heuristic_examples():
    u = heuristic_origin(np.array([0.0, 1.0, 1.0]), 1, UNIFORM)
    assert len(u.support) == 4 and np.allclose(u.weights, 0.25)
    with pytest.raises(ValueError):
        heuristic_origin(np.zeros(3), 0, INVERSE_DISTANCE)


def test_inverse_distance_weights():
    # d=2, radius 2: two candidates at distance 1 and one at distance 2 (x' excluded)
    inv = heuristic_origin(np.zeros(2), 2, INVERSE_DISTANCE)
    dist = inv.support.sum(axis=1)
    assert sorted(dist.tolist()) == [1, 1, 2]
    assert np.allclose(inv.weights[dist == 1], 0.4) and np.allclose(inv.weights[dist == 2], 0.2)
    # restricted to one candidate per distance the split is 2/3 vs 1/3
    near, far = inv.weights[dist == 1][0], inv.weights[dist == 2][0]
    assert np.allclose(np.array([near, far]) / (near + far), [2 / 3, 1 / 3])


@settings(max_examples=30)
@given(st.integers(1, 10).flatmap(lambda d: st.tuples(st.just(d), st.integers(0, min(d, 3)))))
def test_uniform_weights_sum_to_one(dr):
    d, r = dr
    dist = heuristic_origin(np.zeros(d), r, UNIFORM)
    assert dist.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(dist.support.sum(axis=1) <= r)


# -- feature models --------------------------------------------------------------


def test_feature_model_examples():
    pb = fit_feature_model(np.array([[1.0, 0.0]]), "product-bernoulli", smoothing=1.0)
    assert np.allclose(pb.means, [2 / 3, 1 / 3])
    with pytest.raises(ValueError):
        fit_feature_model(np.array([[1.0, 0.0]]), "product-bernoulli", smoothing=0.0)
    with pytest.raises(ValueError):
        fit_feature_model(np.zeros((0, 3)))
    x = np.array([1.0, 0.0])
    assert pb.prob(x[None, :])[0] == pytest.approx(2 / 3 * 2 / 3)
    support, p = pb.enumerate()
    assert p.sum() == pytest.approx(1.0)


def test_empirical_sampling_frequencies():
    rng = np.random.default_rng(0)
    X = (rng.random((50, 3)) < [0.2, 0.5, 0.9]).astype(float)
    em = EmpiricalModel(X)
    draws = em.sample(10_000, np.random.default_rng(1))
    freq = X.mean(axis=0)
    sigma = np.sqrt(freq * (1 - freq) / 10_000)
    assert np.all(np.abs(draws.mean(axis=0) - freq) <= 3 * sigma + 1e-12)
    support, p = em.enumerate()
    assert p.sum() == pytest.approx(1.0)


def test_product_model_probability_definition():
    means = np.array([0.2, 0.7, 0.5])
    pb = ProductBernoulli(means)
    X = np.array([[1, 0, 1], [0, 1, 1]], dtype=float)
    expect = np.prod(np.where(X == 1, means, 1 - means), axis=1)
    assert np.allclose(pb.prob(X), expect)


# -- ABC sampler -----------------------------------------------------------------


def test_abc_no_bad_classes_returns_observation():
    model, sim = small_problem(l=0)
    fm = ProductBernoulli(np.full(4, 0.5))
    x_obs = np.array([1.0, 0.0, 1.0, 1.0])
    res = abc_sample_origin(x_obs, fm, sim, ABCConfig(tol=0, n_samples=50), np.random.default_rng(0))
    assert np.all(res.samples == x_obs)
    assert 0 < res.acceptance_rate <= 1


def test_abc_vacuous_tolerance_samples_the_prior():
    _, sim = small_problem()
    fm = ProductBernoulli(np.array([0.1, 0.5, 0.8, 0.3]))
    res = abc_sample_origin(np.zeros(4), fm, sim, ABCConfig(tol=4, n_samples=20_000), np.random.default_rng(1))
    assert res.acceptance_rate == 1.0
    sigma = np.sqrt(fm.means * (1 - fm.means) / 20_000)
    assert np.all(np.abs(res.samples.mean(axis=0) - fm.means) < 4 * sigma)


def test_abc_matches_exact_posterior_small_worked_case():
    _, sim = small_problem(seed=3)
    fm = ProductBernoulli(np.array([0.3, 0.6, 0.5, 0.4]))
    x_obs = np.array([1.0, 1.0, 0.0, 1.0])
    exact = exact_origin_posterior(x_obs, fm, sim, np.random.default_rng(4), n_nested=2000)
    res = abc_sample_origin(x_obs, fm, sim, ABCConfig(tol=0, n_samples=5000), np.random.default_rng(5))
    assert tv_distance(res.samples, exact) < 0.05


def test_abc_failure_reports_budget():
    _, sim = small_problem(l=0)
    fm = ProductBernoulli(np.full(4, 0.01))
    with pytest.raises(ABCFailure) as err:
        abc_sample_origin(np.ones(4), fm, sim, ABCConfig(tol=0, n_samples=1, max_proposals=300, batch_size=64),
                          np.random.default_rng(0))
    assert err.value.proposals == 300


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000))
def test_acceptance_monotone_in_tolerance_and_summary(seed):
    _, sim = small_problem(d=6, k=3, l=1, seed=seed % 7)
    fm = ProductBernoulli(np.full(6, 0.5))
    x_obs = (np.random.default_rng(seed).random(6) < 0.5).astype(float)
    rng = np.random.default_rng(seed)
    X = fm.sample(400, rng)
    P = sim.predictive(X)
    y = np.minimum((rng.random((400, 1)) > np.cumsum(P, axis=1)).sum(axis=1), 2)
    Xt, _ = sim.attack(X, y, rng)
    # fixed proposals: acceptance counts depend only on the distance rule
    rates = [np.mean(summary_distance(Xt, x_obs) <= t) for t in range(7)]
    assert all(a <= b for a, b in zip(rates, rates[1:]))
    summaries = [tuple(range(6)), (0, 1, 2, 3), (0, 1)]
    rates = [np.mean(summary_distance(Xt, x_obs, s) <= 1) for s in summaries]
    assert all(a <= b for a, b in zip(rates, rates[1:]))


# -- exact posterior -------------------------------------------------------------


def test_exact_posterior_examples():
    _, sim0 = small_problem(l=0)
    fm = ProductBernoulli(np.full(4, 0.5))
    x_obs = np.array([0.0, 1.0, 1.0, 0.0])
    post = exact_origin_posterior(x_obs, fm, sim0, np.random.default_rng(0), n_nested=10)
    assert len(post.support) == 1 and np.array_equal(post.support[0], x_obs)

    model, det = small_problem(seed=2, worst_case=True)
    post = exact_origin_posterior(x_obs, fm, det, np.random.default_rng(0), n_nested=5)
    assert post.weights.sum() == pytest.approx(1.0)
    for z, w in zip(post.support, post.weights):
        if np.array_equal(z, x_obs):
            continue
        xa, _ = det.attack(z[None, :], np.array([0]), np.random.default_rng(0))
        assert np.array_equal(xa[0], x_obs) and w > 0


# -- decision rule ---------------------------------------------------------------


def test_robust_classify_examples():
    rng = np.random.default_rng(0)
    m = MRModel(rng.normal(size=(3, 4)), rng.normal(size=3))
    x = np.array([1.0, 0.0, 0.0, 1.0])
    label, _ = robust_classify(np.repeat(x[None, :], 5, axis=0), m, np.eye(3))
    assert label == int(np.argmax(predict_proba(m, x)))

    rows = {0: [0.8, 0.2], 1: [0.4, 0.6]}
    pred = lambda X: np.array([rows[int(r[0])] for r in X])  # noqa: E731
    label, psi = robust_classify(np.array([[0.0], [1.0]]), pred, np.eye(2))
    # averaged predictive (0.6, 0.4): the first class
    assert label == 0 and np.allclose(psi, [0.6, 0.4])

    U = np.array([[0.0, 0.5], [1.0, 1.0]])
    label, _ = robust_classify(np.array([[0.0], [1.0]]), pred, U)
    assert label == 1
    with pytest.raises(ValueError):
        robust_classify(np.zeros((0, 1)), pred, np.eye(2))


@given(st.floats(0.01, 100), st.integers(0, 1000))
def test_robust_classify_scale_invariance(scale, seed):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(3), size=4)
    pred = lambda X: probs  # noqa: E731
    a, _ = robust_classify(np.zeros((4, 1)), pred, np.eye(3))
    b, _ = robust_classify(np.zeros((4, 1)), pred, scale * np.eye(3))
    assert a == b


def test_psi_hat_is_consistent():
    model, sim = small_problem(seed=4)
    fm = ProductBernoulli(np.array([0.4, 0.5, 0.6, 0.5]))
    x_obs = np.array([1.0, 0.0, 1.0, 1.0])
    exact = exact_origin_posterior(x_obs, fm, sim, np.random.default_rng(0), n_nested=4000)
    psi_exact = np.eye(2) @ (exact.weights @ predict_proba(model, exact.support))
    res = abc_sample_origin(x_obs, fm, sim, ABCConfig(tol=0, n_samples=100_000, batch_size=8192),
                            np.random.default_rng(1))
    P = predict_proba(model, res.samples)
    psi_hat = expected_utilities(P, np.eye(2))
    se = P.std(axis=0) / np.sqrt(len(P))
    # allow for the oracle's own nested-draw noise on top of the sampling error
    assert np.all(np.abs(psi_hat - psi_exact) <= 3 * se + 0.01)


def test_origin_samples_dispatch():
    model, sim = small_problem()
    x = np.array([1.0, 0.0, 1.0, 0.0])
    s, w, tele = origin_samples(x, UNIFORM)
    assert len(s) == 5 and w.sum() == pytest.approx(1)
    fm = ProductBernoulli(np.full(4, 0.5))
    s, w, tele = origin_samples(x, "abc", rng=np.random.default_rng(0), feature_model=fm, simulator=sim,
                                abc=ABCConfig(tol=1, n_samples=3))
    assert len(s) == 3 and w is None and tele["proposals"] >= 3
    with pytest.raises(ValueError):
        origin_samples(x, "nope")
