"""Imbalance-adjusted random forests: one unpruned CART tree per partition of
every bootstrap draw, minority over/undersampling by a tunable weight, hard-vote
probabilities, weight tuning, staging-group selection and permutation importance."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import rng as rngmod
from ..errors import SchemaError, UndefinedStatisticError, ValidationError
from ..stats.roc import auc_score
from . import _cart
from .logistic import partition_index_sets

WEIGHT_GRID = tuple(round(0.5 + 0.1 * k, 1) for k in range(16))
STAGING_GROUPS = {
    "T": ("t_stage",),
    "N": ("n_stage",),
    "TN": ("t_stage", "n_stage"),
    "TNM": ("tnm_stage",),
}
BASE_CLINICAL = ("age", "hn_type")
RISK_GROUPS = {"two-group": ("low", "high"), "three-group": ("low", "medium", "high")}


@dataclass(frozen=True)
class FeatureSchema:
    """Column names; ``categories[name]`` lists the labels of a categorical column (coded 0..K-1)."""

    names: tuple
    categories: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(set(self.names)) != len(self.names):
            raise SchemaError("duplicate feature names")
        for name, cats in self.categories.items():
            if name not in self.names:
                raise SchemaError(f"categorical column {name!r} not in schema")
            if not 2 <= len(cats) <= _cart.MAX_CATEGORIES:
                raise SchemaError(f"categorical column {name!r} needs 2..{_cart.MAX_CATEGORIES} categories")

    @property
    def is_categorical(self):
        return np.array([n in self.categories for n in self.names], dtype=np.bool_)

    def check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != len(self.names):
            raise SchemaError(f"expected {len(self.names)} columns, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise SchemaError("feature rows must be complete and finite")
        for j, name in enumerate(self.names):
            if name in self.categories:
                codes = X[:, j]
                if np.any(codes != np.round(codes)) or codes.min() < 0 or codes.max() >= len(self.categories[name]):
                    raise SchemaError(f"column {name!r} holds an unknown category code")
        return np.ascontiguousarray(X)


@dataclass(eq=False)
class ForestModel:
    """Flat node arrays of all trees (see ``_cart``) plus schema and training settings."""

    schema: FeatureSchema
    feature: np.ndarray
    threshold: np.ndarray
    catmask: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    tree_start: np.ndarray
    oversampling_weight: float
    seed: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValidationError("a forest needs at least one tree")

    @property
    def n_trees(self):
        return int(self.tree_start.size - 1)

    def votes(self, X):
        X = self.schema.check(X)
        return _cart.tree_votes(X, self.schema.is_categorical, self.feature, self.threshold, self.catmask,
                                self.left, self.right, self.value, self.tree_start)

    def predict_proba(self, X):
        """Fraction of trees voting for the event."""
        v = self.votes(X)
        return v.sum(axis=1, dtype=np.int64) / self.n_trees

    # -------------------------------------------------------------- JSON
    def _node_doc(self, base, k):
        j = int(self.feature[base + k])
        if j < 0:
            return {"leaf": int(self.value[base + k])}
        name = self.schema.names[j]
        doc = {"feature": name}
        if name in self.schema.categories:
            mask = int(self.catmask[base + k])
            cats = self.schema.categories[name]
            doc["left_categories"] = [c for i, c in enumerate(cats) if mask >> i & 1]
        else:
            doc["threshold"] = float(self.threshold[base + k])
        doc["left"] = self._node_doc(base, int(self.left[base + k]))
        doc["right"] = self._node_doc(base, int(self.right[base + k]))
        return doc

    def to_dict(self):
        return {
            "type": "partition_random_forest",
            "schema": {"names": list(self.schema.names),
                       "categories": {k: list(v) for k, v in self.schema.categories.items()}},
            "n_trees": self.n_trees,
            "oversampling_weight": self.oversampling_weight,
            "seed": int(self.seed),
            "voting": "hard",
            "provenance": self.provenance,
            "trees": [self._node_doc(int(self.tree_start[t]), 0) for t in range(self.n_trees)],
        }

    @classmethod
    def from_dict(cls, doc):
        schema = FeatureSchema(tuple(doc["schema"]["names"]),
                               {k: tuple(v) for k, v in doc["schema"]["categories"].items()})
        index = {n: j for j, n in enumerate(schema.names)}
        cols = {n: [] for n in ("feature", "threshold", "catmask", "left", "right", "value")}
        starts = [0]

        def emit(node):
            k = len(cols["feature"]) - starts[-1]
            for n in cols:
                cols[n].append(0)
            at = starts[-1] + k
            if "leaf" in node:
                cols["feature"][at] = -1
                cols["value"][at] = int(node["leaf"])
                cols["left"][at] = cols["right"][at] = -1
                return k
            name = node["feature"]
            if name not in index:
                raise SchemaError(f"split feature {name!r} not in schema")
            cols["feature"][at] = index[name]
            if name in schema.categories:
                cats = schema.categories[name]
                cols["catmask"][at] = sum(1 << cats.index(c) for c in node["left_categories"])
            else:
                cols["threshold"][at] = float(node["threshold"])
            cols["left"][at] = emit(node["left"])
            cols["right"][at] = emit(node["right"])
            return k

        for tree in doc["trees"]:
            emit(tree)
            starts.append(len(cols["feature"]))
        return cls(
            schema=schema,
            feature=np.array(cols["feature"], dtype=np.int32),
            threshold=np.array(cols["threshold"], dtype=np.float64),
            catmask=np.array(cols["catmask"], dtype=np.uint64),
            left=np.array(cols["left"], dtype=np.int32),
            right=np.array(cols["right"], dtype=np.int32),
            value=np.array(cols["value"], dtype=np.int8),
            tree_start=np.array(starts, dtype=np.int64),
            oversampling_weight=float(doc["oversampling_weight"]),
            seed=int(doc["seed"]),
            provenance=doc.get("provenance", {}),
        )


# ------------------------------------------------------------------ training

@dataclass(frozen=True, eq=False)
class ForestPlan:
    """Bootstrap draws, their partitions and minority orderings, shared by every weight."""

    partitions: tuple  # per tree: (majority rows, permuted minority rows)
    draw_of_tree: np.ndarray
    seeds: np.ndarray
    skipped: int


def make_forest_plan(labels, n_bootstrap=100, seed=0, label="forest", max_retries=10) -> ForestPlan:
    labels = np.asarray(labels).astype(np.int64)
    n = labels.size
    if labels.all() or not labels.any():
        raise UndefinedStatisticError("forest training needs both classes")
    parts, draw_of_tree, seeds = [], [], []
    skipped = 0
    for b in range(n_bootstrap):
        gen = rngmod.stream(seed, label, b)
        for _ in range(max_retries):
            inbag = gen.integers(0, n, n)
            npos = int(labels[inbag].sum())
            if 0 < npos < n:
                break
        else:
            skipped += 1
            continue
        for k, rows in enumerate(partition_index_sets(labels, inbag, gen)):
            is_min = labels[rows] == 1
            parts.append((rows[~is_min], gen.permutation(rows[is_min])))
            draw_of_tree.append(b)
            seeds.append(rngmod.child_seed(seed, label, b, "tree", k))
    if not parts:
        raise UndefinedStatisticError("every bootstrap draw was degenerate")
    return ForestPlan(tuple(parts), np.array(draw_of_tree), np.array(seeds, dtype=np.uint64), skipped)


def resample_minority(minority, weight):
    """Replicate (weight > 1) or truncate (weight < 1) a permuted minority to round-half-up(weight * m) rows."""
    target = max(1, math.floor(weight * len(minority) + 0.5))
    return np.resize(minority, target)


def train_forest(X, labels, weight=1.0, n_bootstrap=100, seed=0, schema: FeatureSchema | None = None,
                 mtry=None, plan: ForestPlan | None = None, label="forest") -> ForestModel:
    """Grow one tree per partition of each bootstrap draw (tree count = sum of partition counts)."""
    if not 0.5 <= weight <= 2.0:
        raise ValidationError("oversampling weight must lie in [0.5, 2.0]")
    X = np.asarray(X, dtype=np.float64)
    if schema is None:
        schema = FeatureSchema(tuple(f"x{j}" for j in range(X.shape[1])))
    X = schema.check(X)
    labels = np.asarray(labels).astype(np.int64)
    if plan is None:
        plan = make_forest_plan(labels, n_bootstrap, seed, label)
    d = X.shape[1]
    mtry = max(1, int(math.floor(math.sqrt(d)))) if mtry is None else int(mtry)
    blocks = [np.concatenate([maj, resample_minority(mino, weight)]) for maj, mino in plan.partitions]
    offsets = np.zeros(len(blocks) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(b) for b in blocks])
    samples = np.concatenate(blocks).astype(np.int64)
    arrays = _cart.grow_forest(X, labels, schema.is_categorical, samples, offsets, plan.seeds, mtry)
    return ForestModel(schema, *arrays, oversampling_weight=float(weight), seed=int(seed),
                       provenance={"bootstrap_draws": int(len(np.unique(plan.draw_of_tree))),
                                   "skipped_draws": int(plan.skipped), "mtry": mtry, "min_leaf": 1,
                                   "criterion": "gini"})


def predict_forest(model: ForestModel, x):
    """Positive-vote fraction for one row (or each row of a matrix)."""
    p = model.predict_proba(x)
    return float(p[0]) if np.ndim(x) == 1 else p


# ------------------------------------------------------------------ tuning

@dataclass(frozen=True)
class SubSamplingPlan:
    n_splits: int = 10
    test_fraction: float = 1.0 / 3.0


def stratified_splits(labels, plan: SubSamplingPlan = SubSamplingPlan(), seed=0):
    """``n_splits`` (train, test) index pairs with a 2:1 size ratio and the event proportion kept per class."""
    labels = np.asarray(labels)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if pos.size < plan.n_splits or neg.size < plan.n_splits:
        raise ValidationError("stratified sub-sampling needs at least n_splits patients per class")
    n_pos_test = math.floor(pos.size * plan.test_fraction + 0.5)
    n_neg_test = math.floor(neg.size * plan.test_fraction + 0.5)
    out = []
    for s in range(plan.n_splits):
        gen = rngmod.stream(seed, "subsample", s)
        pp = gen.permutation(pos)
        nn = gen.permutation(neg)
        test = np.sort(np.concatenate([pp[:n_pos_test], nn[:n_neg_test]]))
        train = np.sort(np.concatenate([pp[n_pos_test:], nn[n_neg_test:]]))
        out.append((train, test))
    return out


@dataclass
class WeightTuning:
    weights: tuple
    table: np.ndarray  # weights x splits sub-testing AUC
    best_weight: float

    @property
    def mean_auc(self):
        return self.table.mean(axis=1)


def _split_aucs(X, labels, schema, weights, splits, n_bootstrap, seed, label):
    table = np.zeros((len(weights), len(splits)))
    for s, (train, test) in enumerate(splits):
        plan = make_forest_plan(labels[train], n_bootstrap, seed, (label, s))
        for w, weight in enumerate(weights):
            model = train_forest(X[train], labels[train], weight, schema=schema, plan=plan, seed=seed)
            table[w, s] = auc_score(model.predict_proba(X[test]), labels[test])
    return table


def tune_weight(X, labels, schema: FeatureSchema | None = None, plan: SubSamplingPlan = SubSamplingPlan(),
                weights=WEIGHT_GRID, n_bootstrap=100, seed=0) -> WeightTuning:
    """Mean sub-testing AUC per minority weight over stratified 2:1 splits; ties go to the smallest weight.

    Every weight sees the same splits, draws and partitions.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    splits = stratified_splits(labels, plan, rngmod.child_seed(seed, "tune-splits"))
    table = _split_aucs(X, labels, schema, tuple(weights), splits, n_bootstrap, seed, "tune")
    means = table.mean(axis=1)
    best = int(np.flatnonzero(means == means.max())[0])
    return WeightTuning(tuple(weights), table, float(weights[best]))


@dataclass
class StagingSelection:
    group: str
    mean_auc: dict
    table: np.ndarray


def clinical_design(clinical: dict, columns):
    """Stack clinical columns (``hn_type`` already coded) into a matrix and its schema."""
    from ..pipeline.manifest import HN_TYPES  # local import keeps models independent of I/O at import time
    X = np.column_stack([np.asarray(clinical[c], dtype=np.float64) for c in columns])
    cats = {"hn_type": HN_TYPES} if "hn_type" in columns else {}
    return X, FeatureSchema(tuple(columns), cats)


def select_staging_group(clinical: dict, labels, plan: SubSamplingPlan = SubSamplingPlan(), weight=1.0,
                         n_bootstrap=100, seed=0) -> StagingSelection:
    """Clinical-only forests (age + H&N type + one staging group) compared by mean sub-testing AUC."""
    labels = np.asarray(labels).astype(np.int64)
    splits = stratified_splits(labels, plan, rngmod.child_seed(seed, "staging-splits"))
    rows, means = [], {}
    for group, cols in STAGING_GROUPS.items():
        X, schema = clinical_design(clinical, BASE_CLINICAL + cols)
        t = _split_aucs(X, labels, schema, (weight,), splits, n_bootstrap, seed, ("staging", group))[0]
        rows.append(t)
        means[group] = float(t.mean())
    best = max(STAGING_GROUPS, key=lambda g: means[g])  # first maximum in declaration order
    return StagingSelection(best, means, np.array(rows))


def permutation_importance(model: ForestModel, X, labels, n_perm=100, seed=0):
    """Mean drop in AUC when one column is shuffled, per column."""
    X = model.schema.check(X)
    labels = np.asarray(labels)
    base = auc_score(model.predict_proba(X), labels)
    out = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        drops = np.empty(n_perm)
        Xp = X.copy()
        for p in range(n_perm):
            Xp[:, j] = rngmod.stream(seed, "permutation", j, p).permutation(X[:, j])
            drops[p] = base - auc_score(model.predict_proba(Xp), labels)
        out[j] = drops.mean()
    return out


def stratify_risk(probabilities, mode="three-group"):
    """Risk-group codes (0 = low): two-group splits at 0.5 (>= is high);
    three-group uses [0, 1/3), [1/3, 2/3), [2/3, 1]."""
    p = np.asarray(probabilities, dtype=np.float64)
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise ValidationError("probabilities must lie in [0, 1]")
    if mode == "two-group":
        return (p >= 0.5).astype(np.int8)
    if mode == "three-group":
        return ((p >= 1.0 / 3.0).astype(np.int8) + (p >= 2.0 / 3.0).astype(np.int8)).astype(np.int8)
    raise ValidationError(f"unknown stratification mode {mode!r}")
