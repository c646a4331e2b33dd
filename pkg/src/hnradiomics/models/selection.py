"""Radiomic model construction: Gain-based reduction, stepwise forward selection,
model-order choice and final coefficient averaging."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from ..stats.association import mic_against, spearman_columns, tie_ranks
from .bootstrap import Estimate632, LogisticFamily, auc_632_plus, make_bootstrap_plan
from .logistic import EnsembleLogisticModel, add_intercept, fit_logistic_batch


@dataclass(frozen=True)
class SelectionConfig:
    reduced_set_size: int = 25
    n_experiments: int = 25
    n_bootstrap: int = 100
    max_order: int = 10
    gain_tradeoff: float = 0.5
    finalize_bootstrap: int = 100
    order: int | None = None  # explicit model order; None picks it with the one-SE rule

    def __post_init__(self):
        for name in ("reduced_set_size", "n_experiments", "n_bootstrap", "max_order", "finalize_bootstrap"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if not 0.0 <= self.gain_tradeoff <= 1.0:
            raise ValidationError("gain_tradeoff must lie in [0, 1]")
        if self.order is not None and not 1 <= self.order <= self.max_order:
            raise ValidationError("order must lie in [1, max_order]")


def standardize(X):
    """Column means and scales (population SD, 1 for constant columns)."""
    X = np.asarray(X, dtype=np.float64)
    means = X.mean(axis=0)
    scales = X.std(axis=0)
    scales = np.where(scales > 0, scales, 1.0)
    return means, scales


@dataclass(frozen=True, eq=False)
class ReducedSet:
    indices: list
    gains: list
    spearman: np.ndarray
    truncated: bool


def reduce_feature_set(X, labels, cfg: SelectionConfig = SelectionConfig()) -> ReducedSet:
    """Greedy pick of ``cfg.reduced_set_size`` columns maximizing
    ``delta * |r_s(f, y)| - (1 - delta) * max_{s in S} MIC(f, s)``.

    The first pick maximizes |r_s| alone. Constant columns are never picked and
    ties go to the lowest column index.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    r, _ = spearman_columns(X, labels)
    usable = np.isfinite(r)
    k = cfg.reduced_set_size
    truncated = int(usable.sum()) < k
    k = min(k, int(usable.sum()))
    delta = cfg.gain_tradeoff
    relevance = np.where(usable, np.abs(np.nan_to_num(r)), -np.inf)
    redundancy = np.zeros(X.shape[1])
    available = usable.copy()
    ranks = tie_ranks(X)
    picked, gains = [], []
    for step in range(k):
        gain = relevance if step == 0 else delta * relevance - (1.0 - delta) * redundancy
        gain = np.where(available, gain, -np.inf)
        j = int(np.argmax(gain))  # first maximum -> lowest index
        picked.append(j)
        gains.append(float(gain[j]))
        available[j] = False
        if step + 1 < k:
            cols = np.flatnonzero(available)
            redundancy[cols] = np.maximum(redundancy[cols], mic_against(X[:, j], X[:, cols], ranks[:, j], ranks[:, cols]))
    return ReducedSet(picked, gains, r, truncated)


@dataclass
class StepwiseResult:
    """Per-order winners over all experiments (orders 1..max_order)."""

    combinations: dict  # order -> tuple of column indices (selection order)
    estimates: dict  # order -> Estimate632 of the winner
    experiments: list  # experiment -> list of (feature tuple, Estimate632) per order
    n_evaluations: int

    @property
    def curve(self):
        return np.array([self.estimates[k].auc for k in sorted(self.estimates)])


class _SetEvaluator:
    """0.632+ AUC of a feature subset on a shared bootstrap plan, cached by subset.

    All subsets use the same draws and partitions, so the estimate depends only
    on which columns are in the model; columns are fitted in ascending order.
    """

    def __init__(self, Z, labels, plan):
        self.Z = Z
        self.labels = labels
        self.plan = plan
        self.cache = {}

    def __call__(self, subset) -> Estimate632:
        key = frozenset(subset)
        hit = self.cache.get(key)
        if hit is None:
            cols = sorted(key)
            hit = auc_632_plus(LogisticFamily(self.Z[:, cols]), None, self.labels, plan=self.plan)
            self.cache[key] = hit
        return hit


def stepwise_select(reduced, X, labels, cfg: SelectionConfig = SelectionConfig(), seed=0, max_order=None) -> StepwiseResult:
    """Forward selection from every starter in ``reduced`` (the first ``cfg.n_experiments``).

    Each experiment greedily appends the candidate with the highest 0.632+
    bootstrap AUC; per order the best experiment wins (ties: earliest
    experiment, then lowest position in ``reduced``). ``X`` holds raw columns;
    they are z-standardized on the given rows.
    """
    reduced = list(reduced)
    if not reduced:
        raise ValidationError("empty reduced feature set")
    labels = np.asarray(labels)
    X = np.asarray(X, dtype=np.float64)
    Z = X[:, reduced]
    means, scales = standardize(Z)
    Z = (Z - means) / scales
    top = min(cfg.max_order if max_order is None else max_order, len(reduced))
    plan = make_bootstrap_plan(labels, cfg.n_bootstrap, seed, label="selection")
    evaluate = _SetEvaluator(Z, labels, plan)
    n_exp = min(cfg.n_experiments, len(reduced))
    experiments = []
    for starter in range(n_exp):
        current = [starter]
        path = [(tuple(current), evaluate(current))]
        for _ in range(1, top):
            best, best_est = None, None
            for c in range(len(reduced)):
                if c in current:
                    continue
                est = evaluate(current + [c])
                if best_est is None or est.auc > best_est.auc:
                    best, best_est = c, est
            current = current + [best]
            path.append((tuple(current), best_est))
        experiments.append(path)
    combinations, estimates = {}, {}
    for k in range(top):
        winner = max(range(n_exp), key=lambda e: (experiments[e][k][1].auc, -e))
        feats, est = experiments[winner][k]
        combinations[k + 1] = tuple(reduced[i] for i in feats)
        estimates[k + 1] = est
    experiments = [[(tuple(reduced[i] for i in feats), est) for feats, est in path] for path in experiments]
    return StepwiseResult(combinations, estimates, experiments, len(evaluate.cache))


def choose_order(result: StepwiseResult, order=None):
    """Explicit ``order`` if given, else the smallest order whose 0.632+ AUC is
    within one standard error of the best order's AUC."""
    if order is not None:
        if order not in result.estimates:
            raise ValidationError(f"order {order} was not evaluated")
        return order
    orders = sorted(result.estimates)
    best = max(orders, key=lambda k: (result.estimates[k].auc, -k))
    floor = result.estimates[best].auc - result.estimates[best].standard_error
    return next(k for k in orders if result.estimates[k].auc >= floor)


def finalize_model(columns, X, labels, seed=0, n_bootstrap=100, feature_names=None) -> EnsembleLogisticModel:
    """Average logistic coefficients over every partition of ``n_bootstrap`` fresh draws.

    Standardization constants come from all rows of ``X`` and are stored in the model.
    """
    columns = list(columns)
    if not columns:
        raise ValidationError("empty feature combination")
    labels = np.asarray(labels)
    Xs = np.asarray(X, dtype=np.float64)[:, columns]
    means, scales = standardize(Xs)
    Xd = add_intercept((Xs - means) / scales)
    plan = make_bootstrap_plan(labels, n_bootstrap, seed, label="finalize")
    flat = [p for d in plan.draws for p in d.partitions]
    res = fit_logistic_batch(Xd, labels, flat)
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in columns]
    return EnsembleLogisticModel(
        names,
        res.coefficients.mean(axis=0),
        means=means,
        scales=scales,
        provenance={
            "seed": int(seed),
            "bootstrap_draws": len(plan.draws),
            "skipped_draws": int(plan.skipped),
            "partition_fits": len(flat),
            "ridge_fallbacks": int(res.ridge.sum()),
        },
    )


@dataclass
class RadiomicModelBuild:
    reduced: ReducedSet
    stepwise: StepwiseResult
    order: int
    model: EnsembleLogisticModel
    config: SelectionConfig = field(default_factory=SelectionConfig)


def build_radiomic_model(X, labels, names, cfg: SelectionConfig = SelectionConfig(), seed=0) -> RadiomicModelBuild:
    """Reduce, select stepwise, choose the order and finalize, all on the given (training) rows."""
    reduced = reduce_feature_set(X, labels, cfg)
    top = cfg.max_order if cfg.order is None else cfg.order
    step = stepwise_select(reduced.indices, X, labels, cfg, seed=seed, max_order=top)
    order = choose_order(step, cfg.order)
    cols = list(step.combinations[order])
    model = finalize_model(cols, X, labels, seed=seed, n_bootstrap=cfg.finalize_bootstrap,
                           feature_names=[names[j] for j in cols])
    return RadiomicModelBuild(reduced, step, order, model, cfg)
