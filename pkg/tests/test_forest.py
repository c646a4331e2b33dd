import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import roc_auc_score
from sklearn.tree import DecisionTreeClassifier

from hnradiomics import rng as rngmod
from hnradiomics.errors import SchemaError, UndefinedStatisticError, ValidationError
from hnradiomics.models import _cart
from hnradiomics.models.forest import (STAGING_GROUPS, WEIGHT_GRID, FeatureSchema, ForestModel, SubSamplingPlan,
                                       make_forest_plan, permutation_importance, predict_forest,
                                       resample_minority, select_staging_group, stratified_splits, stratify_risk,
                                       train_forest, tune_weight)
from hnradiomics.models.partition import partition_count


def planted(seed, n=200, d=6, rate=0.15, strength=2.0):
    """Event = top ``rate`` of strength * x0 + noise; the other columns are noise."""
    g = rngmod.stream(seed, "forest-planted")
    X = g.normal(size=(n, d))
    lin = strength * X[:, 0] + g.normal(size=n)
    y = np.zeros(n, dtype=int)
    y[np.argsort(-lin)[:round(rate * n)]] = 1
    return X, y


def single_tree(X, y, is_cat=None, seed=1):
    """One tree on all rows with every feature tried at each split."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    is_cat = np.zeros(X.shape[1], dtype=np.bool_) if is_cat is None else is_cat
    samples = np.arange(len(y), dtype=np.int64)
    arrays = _cart.grow_forest(X, np.asarray(y, dtype=np.int64), is_cat, samples,
                               np.array([0, len(y)], dtype=np.int64), np.array([seed], dtype=np.uint64), X.shape[1])
    return arrays


def weighted_gini(y_left, y_right):
    out = 0.0
    for part in (y_left, y_right):
        if len(part):
            p = np.mean(part)
            out += 2.0 * len(part) * p * (1 - p)
    return out


# ------------------------------------------------------------------ CART

def test_root_split_matches_brute_force_minimum():
    for seed in range(30):
        g = np.random.default_rng(seed)
        n = int(g.integers(8, 40))
        X = np.column_stack([g.normal(size=n), g.integers(0, 4, n).astype(float), g.normal(size=n)])
        y = (g.random(n) < 0.4).astype(int)
        if y.min() == y.max():
            continue
        is_cat = np.array([False, True, False])
        feature, threshold, catmask, *_ = single_tree(X, y, is_cat)
        best = np.inf
        for j in (0, 2):
            v = np.unique(X[:, j])
            for t in (v[:-1] + v[1:]) / 2:
                best = min(best, weighted_gini(y[X[:, j] <= t], y[X[:, j] > t]))
        cats = np.unique(X[:, 1]).astype(int)
        for r in range(1, len(cats)):
            for subset in itertools.combinations(cats, r):
                left = np.isin(X[:, 1], subset)
                best = min(best, weighted_gini(y[left], y[~left]))
        j = feature[0]
        if is_cat[j]:
            left = np.array([(int(catmask[0]) >> int(c)) & 1 for c in X[:, j]], dtype=bool)
        else:
            left = X[:, j] <= threshold[0]
        assert weighted_gini(y[left], y[~left]) == pytest.approx(best, abs=1e-12)


def test_root_split_matches_sklearn_on_continuous_data():
    for seed in range(20):
        g = np.random.default_rng(100 + seed)
        X = g.normal(size=(60, 4))
        y = (X[:, 1] + 0.5 * g.normal(size=60) > 0.3).astype(int)
        feature, threshold, *_ = single_tree(X, y)
        sk = DecisionTreeClassifier(criterion="gini", max_features=None, random_state=0).fit(X, y)
        assert feature[0] == sk.tree_.feature[0]
        assert threshold[0] == pytest.approx(sk.tree_.threshold[0], abs=1e-6)  # sklearn stores float32


def test_unpruned_tree_fits_distinct_training_rows():
    g = np.random.default_rng(5)
    X = g.normal(size=(80, 3))
    y = (g.random(80) < 0.3).astype(int)
    arrays = single_tree(X, y)
    votes = _cart.tree_votes(X, np.zeros(3, dtype=np.bool_), *arrays)
    assert np.array_equal(votes[:, 0], y)


def test_leaf_ties_vote_for_the_event():
    X = np.zeros((4, 1))
    y = np.array([0, 1, 0, 1])
    arrays = single_tree(X, y)
    assert arrays[0][0] == -1 and arrays[5][0] == 1


# ------------------------------------------------------------------ training

def test_balanced_labels_weight_one_give_exactly_100_trees():
    # large enough that no bootstrap draw reaches a 1.5:1 class ratio, so P = 1 per draw
    X, _ = planted(0, n=600)
    y = np.r_[np.zeros(300, int), np.ones(300, int)]
    plan = make_forest_plan(y, n_bootstrap=100, seed=3)
    assert np.array_equal(plan.draw_of_tree, np.arange(100))
    model = train_forest(X, y, weight=1.0, n_bootstrap=100, seed=3)
    assert model.n_trees == 100


def test_tree_count_is_sum_of_partition_counts():
    X, y = planted(1)
    plan = make_forest_plan(y, n_bootstrap=100, seed=9)
    expected = 0
    for b in range(100):
        gen = rngmod.stream(9, "forest", b)
        inbag = gen.integers(0, y.size, y.size)
        npos = int(y[inbag].sum())
        expected += partition_count(y.size - npos, npos)
    model = train_forest(X, y, n_bootstrap=100, seed=9)
    assert model.n_trees == expected == len(plan.partitions)
    assert set(plan.draw_of_tree.tolist()) == set(range(100)) and plan.skipped == 0


def test_fifteen_percent_events_give_several_hundred_trees():
    for events in (32, 27, 37):  # training prevalences near the three outcomes
        y = np.r_[np.zeros(200 - events, int), np.ones(events, int)]
        X = np.random.default_rng(events).normal(size=(200, 3))
        n = train_forest(X, y, n_bootstrap=100, seed=events).n_trees
        assert 400 <= n <= 800


def test_every_partition_holds_all_minority_rows_of_its_draw():
    _, y = planted(2, n=150)
    plan = make_forest_plan(y, n_bootstrap=30, seed=4)
    for (maj, mino), b in zip(plan.partitions, plan.draw_of_tree):
        inbag = rngmod.stream(4, "forest", int(b)).integers(0, y.size, y.size)
        assert np.array_equal(np.sort(mino), np.sort(inbag[y[inbag] == 1]))
        assert np.all(y[maj] == 0)


def test_minority_resampling_sizes():
    m = np.arange(10)
    assert len(resample_minority(m, 0.5)) == 5
    assert len(resample_minority(m, 1.0)) == 10
    assert len(resample_minority(m, 1.25)) == 13  # 12.5 rounds half up
    assert len(resample_minority(m, 2.0)) == 20
    assert set(resample_minority(m, 2.0)) == set(m)
    assert len(set(resample_minority(m, 0.5))) == 5


def test_training_errors():
    X = np.zeros((6, 2))
    with pytest.raises(UndefinedStatisticError):
        train_forest(X, np.zeros(6, int))
    with pytest.raises(ValidationError):
        train_forest(X, np.r_[0, 0, 0, 1, 1, 1], weight=2.5)
    with pytest.raises(SchemaError):
        train_forest(np.c_[X, [np.nan] * 6], np.r_[0, 0, 0, 1, 1, 1])


# ------------------------------------------------------------------ prediction

def test_probabilities_are_vote_fractions():
    X, y = planted(3)
    model = train_forest(X, y, n_bootstrap=40, seed=1)
    p = model.predict_proba(X)
    k = p * model.n_trees
    assert np.allclose(k, np.round(k), atol=1e-9)
    assert np.all((p >= 0) & (p <= 1))
    assert predict_forest(model, X[0]) == p[0]


def test_perfectly_separable_training_gives_unanimous_votes():
    x = np.r_[np.arange(20.0), 100 + np.arange(20.0)]
    y = np.r_[np.zeros(20, int), np.ones(20, int)]
    model = train_forest(x[:, None], y, n_bootstrap=50, seed=0)
    assert set(np.unique(model.predict_proba(x[:, None]))) <= {0.0, 1.0}


def test_events_score_higher_on_planted_cohort():
    for seed in range(5):
        X, y = planted(seed)
        p = train_forest(X[:140], y[:140], n_bootstrap=50, seed=seed).predict_proba(X[140:])
        assert p[y[140:] == 1].mean() > p[y[140:] == 0].mean()


def test_pure_noise_forest_auc_is_near_half():
    aucs = []
    for seed in range(20):
        g = rngmod.stream(seed, "forest-noise")
        X = g.normal(size=(300, 5))
        y = (g.random(300) < 0.15).astype(int)
        model = train_forest(X[:200], y[:200], n_bootstrap=30, seed=seed)
        aucs.append(roc_auc_score(y[200:], model.predict_proba(X[200:])))
    assert abs(np.mean(aucs) - 0.5) < 0.08


def test_prediction_ignores_tree_order():
    X, y = planted(4, n=100)
    model = train_forest(X, y, n_bootstrap=20, seed=2)
    doc = model.to_dict()
    doc["trees"] = doc["trees"][::-1]
    assert np.array_equal(ForestModel.from_dict(doc).predict_proba(X), model.predict_proba(X))


def test_json_round_trip_with_categorical_column():
    g = np.random.default_rng(8)
    X = np.column_stack([g.normal(size=120), g.integers(0, 4, 120)])
    y = ((X[:, 1] == 2) | (X[:, 0] > 1)).astype(int)
    schema = FeatureSchema(("age", "hn_type"), {"hn_type": ("a", "b", "c", "d")})
    model = train_forest(X, y, n_bootstrap=20, seed=5, schema=schema)
    doc = json.loads(json.dumps(model.to_dict()))
    back = ForestModel.from_dict(doc)
    assert back.to_dict() == model.to_dict()
    assert np.array_equal(back.predict_proba(X), model.predict_proba(X))
    assert any("left_categories" in json.dumps(t) for t in doc["trees"])


def test_schema_checks():
    schema = FeatureSchema(("a", "t"), {"t": ("x", "y")})
    with pytest.raises(SchemaError):
        schema.check(np.zeros((2, 3)))
    with pytest.raises(SchemaError):
        schema.check(np.array([[0.0, 2.0]]))
    with pytest.raises(SchemaError):
        FeatureSchema(("a", "a"))
    with pytest.raises(SchemaError):
        FeatureSchema(("a",), {"b": ("x", "y")})
    X, y = planted(5, n=60, d=2)
    model = train_forest(X, y, n_bootstrap=5, seed=0)
    with pytest.raises(SchemaError):
        model.predict_proba(X[:, :1])
    doc = model.to_dict()
    doc["trees"][0] = {"feature": "nope", "threshold": 0.0, "left": {"leaf": 0}, "right": {"leaf": 1}}
    with pytest.raises(SchemaError):
        ForestModel.from_dict(doc)


def test_training_is_deterministic():
    X, y = planted(6, n=100)
    a = train_forest(X, y, n_bootstrap=20, seed=11).to_dict()
    b = train_forest(X, y, n_bootstrap=20, seed=11).to_dict()
    assert json.dumps(a) == json.dumps(b)


# ------------------------------------------------------------------ tuning

def test_stratified_splits_keep_ratio_and_event_share():
    y = np.r_[np.zeros(170, int), np.ones(30, int)]
    splits = stratified_splits(y, SubSamplingPlan(), seed=1)
    assert len(splits) == 10
    for train, test in splits:
        assert len(np.intersect1d(train, test)) == 0 and len(train) + len(test) == 200
        assert abs(len(train) - 2 * len(test)) <= 2
        assert abs(y[test].sum() - y.sum() * len(test) / 200) <= 1
    with pytest.raises(ValidationError):
        stratified_splits(np.r_[np.zeros(50, int), np.ones(5, int)])


def test_weight_table_shape_and_determinism():
    X, y = planted(7, n=120)
    a = tune_weight(X, y, n_bootstrap=5, seed=3)
    b = tune_weight(X, y, n_bootstrap=5, seed=3)
    assert a.table.shape == (16, 10)
    assert a.weights == WEIGHT_GRID and WEIGHT_GRID[0] == 0.5 and WEIGHT_GRID[-1] == 2.0
    assert np.array_equal(a.table, b.table) and a.best_weight == b.best_weight
    means = a.mean_auc
    assert a.best_weight == WEIGHT_GRID[int(np.flatnonzero(means == means.max())[0])]


def under_predicted(seed):
    """Binary risk factor with modest enrichment, non-events < 1.5x events (one partition per draw)
    and a binary noise column: at weight 0.5 the enriched cell is voted negative."""
    g = rngmod.stream(seed, "under-predicted")
    x = np.repeat([1.0, 0.0], [202, 98])
    y = np.concatenate([g.permutation(np.arange(202) < 90), g.permutation(np.arange(98) < 32)]).astype(int)
    return np.column_stack([x, g.integers(0, 2, 300).astype(float)]), y


def test_under_predicted_minority_pushes_weight_above_one():
    chosen = [tune_weight(*under_predicted(s), n_bootstrap=20, seed=s).best_weight for s in range(20)]
    assert sum(w > 1.0 for w in chosen) >= 16


def n_stage_cohort(seed, n=200, rate=0.2):
    g = rngmod.stream(seed, "n-stage-signal")
    n_stage = g.integers(0, 4, n)
    t_stage = g.integers(1, 5, n)
    tnm = np.where((n_stage >= 2) | (t_stage == 4), 4,
                   np.where((n_stage == 1) | (t_stage == 3), 3, np.where(t_stage == 2, 2, 1)))
    lin = n_stage + 0.8 * g.normal(size=n)
    y = np.zeros(n, dtype=int)
    y[np.argsort(-lin)[:round(rate * n)]] = 1
    clin = {"age": np.round(g.normal(61, 9, n), 1), "hn_type": g.integers(0, 4, n),
            "t_stage": t_stage, "n_stage": n_stage, "tnm_stage": tnm}
    return clin, y


def test_staging_selection_finds_the_n_stage_signal():
    picks = []
    for seed in range(20):
        sel = select_staging_group(*n_stage_cohort(seed), n_bootstrap=20, seed=seed)
        assert set(sel.mean_auc) == set(STAGING_GROUPS) and len(STAGING_GROUPS) == 4
        assert sel.group in STAGING_GROUPS
        assert sel.mean_auc["N"] > sel.mean_auc["T"]
        picks.append(sel.group)
    # N alone and T + N nest the signal equally; T-only and TNM must lose
    assert sum(p in ("N", "TN") for p in picks) >= 16


# ------------------------------------------------------------------ importance

def test_constant_feature_has_zero_importance():
    X, y = planted(8)
    X[:, 3] = 1.0
    model = train_forest(X[:140], y[:140], n_bootstrap=30, seed=1)
    imp = permutation_importance(model, X[140:], y[140:], n_perm=20, seed=2)
    assert abs(imp[3]) <= 0.01


def test_dominant_feature_has_max_importance():
    for seed in range(20):
        X, y = planted(seed, n=300, d=4, strength=3.0)
        model = train_forest(X[:200], y[:200], n_bootstrap=20, seed=seed)
        imp = permutation_importance(model, X[200:], y[200:], n_perm=10, seed=seed)
        assert int(np.argmax(imp)) == 0, (seed, imp)


def test_importance_is_reproducible():
    X, y = planted(9)
    model = train_forest(X[:140], y[:140], n_bootstrap=20, seed=1)
    a = permutation_importance(model, X[140:], y[140:], n_perm=10, seed=4)
    b = permutation_importance(model, X[140:], y[140:], n_perm=10, seed=4)
    assert np.array_equal(a, b)


# ------------------------------------------------------------------ stratification

def test_stratify_examples():
    assert stratify_risk([0.5], "two-group")[0] == 1
    assert stratify_risk([0.4999], "two-group")[0] == 0
    assert list(stratify_risk([0.1, 0.5, 0.9], "three-group")) == [0, 1, 2]
    assert list(stratify_risk([1 / 3, 2 / 3, 0.0, 1.0], "three-group")) == [1, 2, 0, 2]
    with pytest.raises(ValidationError):
        stratify_risk([1.2])
    with pytest.raises(ValidationError):
        stratify_risk([0.2], "four-group")


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.sampled_from(["two-group", "three-group"]))
def test_stratify_is_monotone(a, b, mode):
    lo, hi = sorted((a, b))
    g = stratify_risk([lo, hi], mode)
    assert g[0] <= g[1]
