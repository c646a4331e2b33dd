"""0.632+ bootstrap estimate of the AUC."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import rng as rngmod
from ..errors import UndefinedStatisticError
from ..stats.roc import auc_blocks, auc_score
from .logistic import add_intercept, fit_logistic_batch, gather_index_sets, partition_index_sets

NO_INFORMATION_AUC = 0.5


@dataclass(frozen=True, eq=False)
class BootstrapDraw:
    inbag: np.ndarray
    oob: np.ndarray
    partitions: tuple


@dataclass(frozen=True, eq=False)
class BootstrapPlan:
    """Bootstrap draws (with their imbalance partitions) shared by every model evaluated on one training set."""

    draws: tuple
    apparent_partitions: tuple
    skipped: int

    def __post_init__(self):
        flat = list(self.apparent_partitions) + [p for d in self.draws for p in d.partitions]
        object.__setattr__(self, "_gathered", gather_index_sets(flat))



def make_bootstrap_plan(labels, n_bootstrap, seed, label="bootstrap", max_retries=10, min_per_class=2):
    labels = np.asarray(labels)
    n = labels.size
    if labels.all() or not labels.any():
        raise UndefinedStatisticError("bootstrap plan needs both classes")
    draws = []
    skipped = 0
    for b in range(n_bootstrap):
        gen = rngmod.stream(seed, label, b)
        for _ in range(max_retries):
            inbag = gen.integers(0, n, n)
            counts = np.bincount(labels[inbag].astype(np.int64), minlength=2)
            oob = np.setdiff1d(np.arange(n), inbag)
            if counts.min() < min_per_class or oob.size == 0:
                continue
            oob_pos = int(labels[oob].sum())
            if oob_pos == 0 or oob_pos == oob.size:
                continue
            parts = partition_index_sets(labels, inbag, gen)
            draws.append(BootstrapDraw(inbag, oob, tuple(parts)))
            break
        else:
            skipped += 1
    if not draws:
        raise UndefinedStatisticError("every bootstrap draw was degenerate")
    apparent = partition_index_sets(labels, np.arange(n), rngmod.stream(seed, label, "apparent"))
    return BootstrapPlan(tuple(draws), tuple(apparent), skipped)


def combine_632_plus(apparent, oob, no_information=NO_INFORMATION_AUC):
    """0.632+ combination of apparent and out-of-bag AUC.

    The out-of-bag AUC is floored at the no-information value, the relative
    overfitting rate R = (apparent - oob) / (apparent - 0.5) is clipped to [0, 1]
    and the weight is w = 0.632 / (1 - 0.368 R).
    """
    oob = max(oob, no_information)
    if apparent > oob and apparent > no_information:
        r = min(1.0, max(0.0, (apparent - oob) / (apparent - no_information)))
    else:
        r = 0.0
    w = 0.632 / (1.0 - 0.368 * r)
    return apparent + w * (oob - apparent)


@dataclass(frozen=True)
class Estimate632:
    auc: float
    apparent: float
    oob: float
    oob_sd: float
    n_draws: int

    @property
    def standard_error(self):
        return self.oob_sd / np.sqrt(self.n_draws)


class LogisticFamily:
    """Imbalance-adjusted ensemble logistic regression on a fixed (standardized) design."""

    def __init__(self, X):
        self.Xd = add_intercept(X)

    def fit_partitions(self, y, partition_lists, gathered=None):
        """Averaged coefficients for each list of partitions."""
        flat = [p for parts in partition_lists for p in parts]
        res = fit_logistic_batch(self.Xd, y, flat, gathered=gathered)
        out, k = [], 0
        for parts in partition_lists:
            out.append(res.coefficients[k:k + len(parts)].mean(axis=0))
            k += len(parts)
        return out

    def scores(self, coef, rows):
        return self.Xd[rows] @ coef


def auc_632_plus(family, X, labels, n_bootstrap=100, seed=0, plan: BootstrapPlan | None = None) -> Estimate632:
    """0.632+ bootstrap AUC of a model family.

    ``family`` is either a :class:`LogisticFamily` (``X`` ignored) or any object
    with ``fit(X, y, partitions) -> model`` where ``model.score(X)`` returns
    risk scores.
    """
    labels = np.asarray(labels)
    if plan is None:
        plan = make_bootstrap_plan(labels, n_bootstrap, seed)
    n = labels.size
    every = np.arange(n)
    oob_aucs = []
    if isinstance(family, LogisticFamily):
        coefs = family.fit_partitions(labels, [plan.apparent_partitions] + [d.partitions for d in plan.draws],
                                      gathered=plan._gathered)
        apparent = auc_score(family.scores(coefs[0], every), labels)
        scores = family.Xd @ np.array(coefs[1:]).T
        oob_aucs = auc_blocks(scores, labels, [d.oob for d in plan.draws])
    else:
        X = np.asarray(X)
        model = family.fit(X, labels, plan.apparent_partitions)
        apparent = auc_score(model.score(X), labels)
        for draw in plan.draws:
            model = family.fit(X, labels, draw.partitions)
            oob_aucs.append(auc_score(model.score(X[draw.oob]), labels[draw.oob]))
    oob_aucs = np.asarray(oob_aucs)
    oob = float(oob_aucs.mean())
    return Estimate632(
        auc=float(combine_632_plus(apparent, oob)),
        apparent=float(apparent),
        oob=oob,
        oob_sd=float(oob_aucs.std(ddof=1)) if oob_aucs.size > 1 else 0.0,
        n_draws=int(oob_aucs.size),
    )
