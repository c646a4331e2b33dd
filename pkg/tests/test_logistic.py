import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings, strategies as st

from hnradiomics import rng as rngmod
from hnradiomics.errors import UndefinedStatisticError
from hnradiomics.models.bootstrap import (Estimate632, LogisticFamily, auc_632_plus, combine_632_plus,
                                          make_bootstrap_plan)
from hnradiomics.models.logistic import (EnsembleLogisticModel, add_intercept, fit_ensemble_logistic,
                                         fit_logistic, fit_logistic_batch, logistic_loglik)
from hnradiomics.models.partition import make_partitions, partition_count


# ------------------------------------------------------------------ partitions

def test_partition_worked_example_168_32():
    labels = np.r_[np.zeros(168, int), np.ones(32, int)]
    s = make_partitions(labels, np.random.default_rng(0))
    assert s.P == 5
    assert sorted(s.majority_sizes) == [33, 33, 34, 34, 34]


def test_partition_small_examples():
    s = make_partitions(np.r_[np.zeros(10, int), np.ones(5, int)], np.random.default_rng(0))
    assert s.P == 2 and s.majority_sizes == [5, 5]
    s = make_partitions(np.r_[np.zeros(3, int), np.ones(5, int)], np.random.default_rng(0))
    assert s.P == 1 and len(s.partitions[0]) == 8
    assert partition_count(15, 10) == 2  # 1.5 rounds half up
    with pytest.raises(UndefinedStatisticError):
        make_partitions(np.ones(5, int), np.random.default_rng(0))


def test_partition_invariants_over_1000_random_label_vectors():
    master = np.random.default_rng(123)
    for trial in range(1000):
        n = int(master.integers(2, 300))
        labels = (master.random(n) < master.uniform(0.02, 0.98)).astype(int)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        s = make_partitions(labels, np.random.default_rng(trial))
        minority_label = s.minority_label
        n_min = int((labels == 1).sum())
        n_maj = n - n_min
        assert minority_label == 1
        assert s.P == max(1, int(np.floor(n_maj / n_min + 0.5)))
        assert len(s.partitions) == s.P
        majority_seen = []
        for p in s.partitions:
            assert set(s.minority_indices) <= set(p)
            majority_seen.extend(i for i in p if labels[i] != minority_label)
        assert sorted(majority_seen) == list(np.flatnonzero(labels != minority_label))
        assert set(s.majority_sizes) <= {n_maj // s.P, -(-n_maj // s.P)}


def test_partitions_deterministic_given_stream():
    labels = np.r_[np.zeros(50, int), np.ones(9, int)]
    a = make_partitions(labels, rngmod.stream(5, "x"))
    b = make_partitions(labels, rngmod.stream(5, "x"))
    assert all(np.array_equal(p, q) for p, q in zip(a.partitions, b.partitions))


# ------------------------------------------------------------------ logistic fits

def numeric_gradient(f, beta, h=1e-5):
    g = np.zeros_like(beta)
    for k in range(beta.size):
        e = np.zeros_like(beta)
        e[k] = h
        g[k] = (f(beta + e) - f(beta - e)) / (2 * h)
    return g


def test_loglik_gradient_matches_finite_differences(rng):
    Xd = add_intercept(rng.normal(size=(80, 3)))
    y = (rng.random(80) < 0.3).astype(float)
    w = rng.integers(1, 4, 80).astype(float)
    for ridge in (0.0, 1e-4):
        for _ in range(10):
            beta = rng.normal(size=4)
            _, grad, hess = logistic_loglik(Xd, y, beta, w, ridge)
            num = numeric_gradient(lambda b: logistic_loglik(Xd, y, b, w, ridge)[0], beta)
            assert np.max(np.abs(grad - num)) / max(1.0, np.max(np.abs(grad))) < 1e-6
            num_h = np.column_stack([numeric_gradient(lambda b: logistic_loglik(Xd, y, b, w, ridge)[1][k], beta)
                                     for k in range(4)])
            np.testing.assert_allclose(hess, num_h, rtol=1e-5, atol=1e-5)


def irls(X, y, iters=100):
    Xd = add_intercept(X)
    beta = np.zeros(Xd.shape[1])
    for _ in range(iters):
        mu = 1 / (1 + np.exp(-Xd @ beta))
        W = mu * (1 - mu)
        z = Xd @ beta + (y - mu) / W
        beta = np.linalg.solve(Xd.T @ (W[:, None] * Xd), Xd.T @ (W * z))
    return beta


def test_fit_matches_irls_and_statsmodels(rng):
    for _ in range(5):
        X = rng.normal(size=(120, 2))
        y = (rng.random(120) < 1 / (1 + np.exp(-(0.5 + X @ [1.0, -0.7])))).astype(float)
        beta = fit_logistic(X, y)
        np.testing.assert_allclose(beta, irls(X, y), atol=1e-6)
        np.testing.assert_allclose(beta, sm.Logit(y, add_intercept(X)).fit(disp=0).params, atol=1e-6)


def test_batch_weights_equal_repeated_rows(rng):
    X = rng.normal(size=(40, 2))
    y = (rng.random(40) < 0.4).astype(float)
    idx = rng.integers(0, 40, 40)
    res = fit_logistic_batch(add_intercept(X), y, [idx, np.arange(40)])
    np.testing.assert_allclose(res.coefficients[0], fit_logistic(X[idx], y[idx]), atol=1e-8)
    np.testing.assert_allclose(res.coefficients[1], fit_logistic(X, y), atol=1e-8)
    assert res.converged.all() and not res.ridge.any()


def test_separation_falls_back_to_ridge_with_flag():
    x = np.linspace(-1, 1, 20)
    y = (x > 0).astype(float)
    res = fit_logistic_batch(add_intercept(x), y, [np.arange(20)])
    assert res.ridge[0]
    assert np.all(np.isfinite(res.coefficients[0]))
    assert res.coefficients[0][1] > 0


def test_balanced_ensemble_equals_plain_fit(rng):
    X = rng.normal(size=(60, 2))
    y = np.r_[np.ones(30), np.zeros(30)]
    model = fit_ensemble_logistic(X, y, np.random.default_rng(0))
    assert model.provenance["partitions"] == 1
    np.testing.assert_allclose(model.coefficients, fit_logistic(X, y), atol=1e-12)


def test_label_flip_symmetric_data_has_zero_intercept(rng):
    X = rng.normal(size=(50, 2))
    Xs = np.vstack([X, -X])
    y = np.r_[(X[:, 0] + rng.normal(size=50) > 0).astype(float), np.zeros(50)]
    y[50:] = 1 - y[:50]
    beta = fit_ensemble_logistic(Xs, y, np.random.default_rng(0)).coefficients
    assert abs(beta[0]) < 1e-6


def test_ensemble_averages_partition_fits(rng):
    X = rng.normal(size=(90, 2))
    y = np.r_[np.ones(15), np.zeros(75)]
    model = fit_ensemble_logistic(X, y, np.random.default_rng(4))
    scheme = make_partitions(y, np.random.default_rng(4))
    fits = [fit_logistic(X[p], y[p]) for p in scheme.partitions]
    np.testing.assert_allclose(model.coefficients, np.mean(fits, axis=0), atol=1e-8)


def test_model_json_round_trip_and_standardization(rng):
    m = EnsembleLogisticModel(["a", "b"], [0.1, 1.0, -2.0], means=[1.0, 2.0], scales=[2.0, 0.5])
    back = EnsembleLogisticModel.from_dict(m.to_dict())
    X = rng.normal(size=(5, 2))
    np.testing.assert_array_equal(back.probability(X), m.probability(X))
    assert m.linear_predictor(np.array([[1.0, 2.0]]))[0] == pytest.approx(0.1)
    with pytest.raises(ValueError):
        EnsembleLogisticModel(["a"], [0.0, np.inf])


# ------------------------------------------------------------------ 0.632+

def test_632_plus_closed_forms():
    assert combine_632_plus(0.8, 0.8) == pytest.approx(0.8)
    # memorizing family: R = 1, w = 0.632 / 0.632 = 1
    assert combine_632_plus(1.0, 0.5) == pytest.approx(0.5)
    r = (0.9 - 0.7) / (0.9 - 0.5)
    w = 0.632 / (1 - 0.368 * r)
    assert combine_632_plus(0.9, 0.7) == pytest.approx(0.9 + w * (0.7 - 0.9))
    # out-of-bag below chance is floored at the no-information value
    assert combine_632_plus(0.9, 0.3) == pytest.approx(0.5)


class ConstantScoreFamily:
    """Scores fixed per patient; apparent and out-of-bag AUC then coincide in expectation only."""

    def __init__(self, scores):
        self.s = scores

    def fit(self, X, y, partitions):
        return self

    def score(self, X):
        return X[:, 0]


def test_632_plus_zero_overfitting_identity():
    # a family whose every fit ranks all patients identically and perfectly
    y = np.r_[np.zeros(30), np.ones(10)]
    X = y[:, None] + 0.0
    est = auc_632_plus(ConstantScoreFamily(None), X, y, n_bootstrap=20, seed=1)
    assert est.apparent == est.oob == est.auc == 1.0


def noise_cohort(seed, n=200, d=3, rate=0.15):
    g = rngmod.stream(seed, "noise-cohort")
    return g.normal(size=(n, d)), (g.random(n) < rate).astype(int)


def test_632_plus_pure_noise_is_near_half():
    est = [auc_632_plus(LogisticFamily(X), None, y, n_bootstrap=100, seed=seed).auc
           for seed, (X, y) in ((s, noise_cohort(s)) for s in range(20))]
    assert abs(np.mean(est) - 0.5) < 0.08
    # the estimator never reports below the no-information rate
    assert min(est) >= 0.5 - 1e-12


def test_bootstrap_plan_draws_have_both_classes():
    y = np.r_[np.zeros(40, int), np.ones(4, int)]
    plan = make_bootstrap_plan(y, 50, seed=3)
    for d in plan.draws:
        assert 0 < y[d.oob].sum() < d.oob.size
        assert np.bincount(y[d.inbag], minlength=2).min() >= 2
        assert not set(d.oob) & set(d.inbag)
    again = make_bootstrap_plan(y, 50, seed=3)
    assert all(np.array_equal(a.inbag, b.inbag) for a, b in zip(plan.draws, again.draws))
    assert len(plan.draws) + plan.skipped == 50
    with pytest.raises(UndefinedStatisticError):
        make_bootstrap_plan(np.zeros(10, int), 5, 0)


def test_estimate_standard_error():
    e = Estimate632(0.7, 0.8, 0.65, 0.1, 100)
    assert e.standard_error == pytest.approx(0.01)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 1.0), st.floats(0.0, 1.0))
def test_632_plus_lies_between_oob_floor_and_apparent(app, oob):
    est = combine_632_plus(app, oob)
    lo = min(app, max(oob, 0.5))
    hi = max(app, max(oob, 0.5))
    assert lo - 1e-12 <= est <= hi + 1e-12
