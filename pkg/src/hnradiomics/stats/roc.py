"""ROC analysis and DeLong's test for paired AUCs."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import stats as sps

from ..errors import UndefinedStatisticError


@dataclass(frozen=True)
class RocSummary:
    auc: float
    sensitivity: float
    specificity: float
    accuracy: float
    threshold: float


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D arrays of equal length")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be binary 0/1")
    labels = labels.astype(bool)
    if labels.all() or not labels.any():
        raise UndefinedStatisticError("AUC is undefined when only one class is present")
    return scores, labels


def auc_score(scores, labels):
    """Mann-Whitney AUC with midranks, i.e. P(score_pos > score_neg) + 0.5 P(tie)."""
    scores, labels = _check_binary(scores, labels)
    ranks = sps.rankdata(scores)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@njit(cache=True)
def _auc_blocks(scores, labels, flat, offsets):
    """Midrank AUC of ``scores[flat[o[k]:o[k+1]], k]`` for each block k (NaN if one class)."""
    out = np.empty(offsets.size - 1)
    for k in range(offsets.size - 1):
        rows = flat[offsets[k]:offsets[k + 1]]
        m = rows.size
        s = np.empty(m)
        for i in range(m):
            s[i] = scores[rows[i], k]
        order = np.argsort(s, kind="mergesort")
        rank_sum = 0.0
        n_pos = 0
        i = 0
        while i < m:
            j = i
            while j + 1 < m and s[order[j + 1]] == s[order[i]]:
                j += 1
            mid = 0.5 * (i + j) + 1.0
            for t in range(i, j + 1):
                if labels[rows[order[t]]]:
                    rank_sum += mid
                    n_pos += 1
            i = j + 1
        n_neg = m - n_pos
        if n_pos == 0 or n_neg == 0:
            out[k] = np.nan
        else:
            out[k] = (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    return out


def auc_blocks(scores, labels, row_sets):
    """AUC of column k of ``scores`` restricted to ``row_sets[k]``, for every k."""
    flat = np.concatenate(row_sets).astype(np.int64)
    offsets = np.zeros(len(row_sets) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(r) for r in row_sets])
    return _auc_blocks(np.ascontiguousarray(scores, dtype=np.float64), np.asarray(labels).astype(np.bool_),
                       flat, offsets)


def roc_curve(scores, labels):
    scores, labels = _check_binary(scores, labels)
    thresholds = np.unique(scores)[::-1]
    n_pos = labels.sum()
    n_neg = labels.size - n_pos
    tpr = np.array([(scores[labels] >= t).sum() / n_pos for t in thresholds])
    fpr = np.array([(scores[~labels] >= t).sum() / n_neg for t in thresholds])
    return RocCurve(
        fpr=np.concatenate([[0.0], fpr]),
        tpr=np.concatenate([[0.0], tpr]),
        thresholds=np.concatenate([[np.inf], thresholds]),
    )


def classification_metrics(probabilities, labels, threshold=0.5):
    """Sensitivity, specificity and accuracy with ``prob >= threshold`` called positive."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    pred = probabilities >= threshold
    tp = np.count_nonzero(pred & labels)
    tn = np.count_nonzero(~pred & ~labels)
    n_pos = np.count_nonzero(labels)
    n_neg = labels.size - n_pos
    sens = tp / n_pos if n_pos else float("nan")
    spec = tn / n_neg if n_neg else float("nan")
    return float(sens), float(spec), float((tp + tn) / labels.size)


def roc(scores, labels, threshold=0.5, probabilities=None):
    """AUC from ``scores`` plus threshold metrics.

    ``probabilities`` (default: ``scores``) are compared to ``threshold``; logistic
    models pass the linear predictor as ``scores`` and its logit transform here.
    """
    auc = auc_score(scores, labels)
    probs = scores if probabilities is None else probabilities
    sens, spec, acc = classification_metrics(probs, labels, threshold)
    return RocSummary(auc, sens, spec, acc, float(threshold)), roc_curve(scores, labels)


def _midrank(x):
    order = np.argsort(x, kind="stable")
    xs = x[order]
    n = len(x)
    ranks = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j < n and xs[j] == xs[i]:
            j += 1
        ranks[i:j] = 0.5 * (i + j - 1) + 1
        i = j
    out = np.empty(n)
    out[order] = ranks
    return out


def delong_components(scores, labels):
    """AUC and DeLong structural components (V10 over positives, V01 over negatives)."""
    scores, labels = _check_binary(scores, labels)
    pos = scores[labels]
    neg = scores[~labels]
    m, n = pos.size, neg.size
    r_all = _midrank(np.concatenate([pos, neg]))
    r_pos = _midrank(pos)
    r_neg = _midrank(neg)
    auc = (r_all[:m].sum() - m * (m + 1) / 2.0) / (m * n)
    v10 = (r_all[:m] - r_pos) / n
    v01 = 1.0 - (r_all[m:] - r_neg) / m
    return auc, v10, v01


def delong_compare(scores_a, scores_b, labels):
    """Paired DeLong comparison. Returns ``(delta_auc, z, p)`` with delta = AUC_a - AUC_b."""
    auc_a, v10a, v01a = delong_components(scores_a, labels)
    auc_b, v10b, v01b = delong_components(scores_b, labels)
    m, n = v10a.size, v01a.size
    s10 = np.cov(np.vstack([v10a, v10b])) if m > 1 else np.zeros((2, 2))
    s01 = np.cov(np.vstack([v01a, v01b])) if n > 1 else np.zeros((2, 2))
    cov = s10 / m + s01 / n
    var = float(cov[0, 0] + cov[1, 1] - 2.0 * cov[0, 1])
    delta = auc_score(scores_a, labels) - auc_score(scores_b, labels)
    if var <= 1e-15 * max(1.0, float(cov[0, 0] + cov[1, 1])):
        return delta, 0.0, 1.0
    z = delta / math.sqrt(var)
    return delta, float(z), float(2.0 * sps.norm.sf(abs(z)))
