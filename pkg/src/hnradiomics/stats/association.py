"""Univariate association: Spearman correlation, Benjamini-Hochberg, and an approximate MIC."""
from __future__ import annotations

import math

import numpy as np
from scipy import stats as sps

from ..errors import UndefinedStatisticError


def average_ranks(x):
    return sps.rankdata(x, method="average")


def spearman(x, y):
    """Spearman's r_s (average ranks for ties) and its two-sided t-approximation p-value."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D arrays of equal length")
    n = x.size
    if n < 3:
        raise UndefinedStatisticError("Spearman correlation needs at least 3 observations")
    rx = average_ranks(x)
    ry = average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    den = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if den == 0.0:
        raise UndefinedStatisticError("Spearman correlation is undefined for constant input")
    r = float(np.clip((rx @ ry) / den, -1.0, 1.0))
    return r, _t_pvalue(r, n)


def _t_pvalue(r, n):
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return float(2.0 * sps.t.sf(abs(t), n - 2))


def spearman_columns(X, y):
    """Vectorized Spearman of every column of ``X`` against ``y``; NaN where a column is constant."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    ry = average_ranks(y)
    ry = ry - ry.mean()
    rx = sps.rankdata(X, axis=0, method="average")
    rx = rx - rx.mean(axis=0)
    den = np.sqrt((rx ** 2).sum(axis=0) * float(ry @ ry))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(den > 0, (rx.T @ ry) / den, np.nan)
    r = np.clip(r, -1.0, 1.0)
    p = np.full(r.shape, np.nan)
    ok = np.isfinite(r)
    with np.errstate(divide="ignore"):
        t = r[ok] * np.sqrt((n - 2) / np.maximum(1.0 - r[ok] ** 2, 1e-300))
    p[ok] = 2.0 * sps.t.sf(np.abs(t), n - 2)
    return r, p


def bh_fdr(p_values, q=0.10):
    """Benjamini-Hochberg step-up rejections at false discovery rate ``q``."""
    p = np.asarray(p_values, dtype=np.float64)
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    m = p.size
    reject = np.zeros(m, dtype=bool)
    if m == 0:
        return reject
    order = np.argsort(p, kind="stable")
    below = p[order] <= q * np.arange(1, m + 1) / m
    if below.any():
        k = int(np.flatnonzero(below).max())
        reject[order[:k + 1]] = True
    return reject


# ---------------------------------------------------------------------- MIC

def mic_bound(n):
    return n ** 0.6


def tie_ranks(x):
    """0-based rank of each value along axis 0, tied values taking their lowest rank."""
    x = np.asarray(x)
    n = x.shape[0]
    order = np.argsort(x, axis=0, kind="stable")
    xs = np.take_along_axis(x, order, axis=0)
    new = np.ones(xs.shape, dtype=bool)
    new[1:] = xs[1:] != xs[:-1]
    pos = np.arange(n).reshape((n,) + (1,) * (x.ndim - 1))
    first = np.maximum.accumulate(np.where(new, pos, 0), axis=0)
    ranks = np.empty_like(first)
    np.put_along_axis(ranks, order, first, axis=0)
    return ranks


def equipartition(x, k):
    """Equal-frequency bins 0..k-1 by rank; tied values share the bin of their lowest rank."""
    x = np.asarray(x)
    return (tie_ranks(x) * k) // x.shape[0]


def _grids(n):
    bound = mic_bound(n)
    return [(a, b) for a in range(2, int(bound // 2) + 1) for b in range(2, int(bound // 2) + 1) if a * b <= bound]


def _mutual_information(table):
    n = table.sum()
    if n == 0:
        return 0.0
    pxy = table / n
    px = pxy.sum(axis=1)
    py = pxy.sum(axis=0)
    terms = []
    for i, j in zip(*np.nonzero(pxy)):
        terms.append(pxy[i, j] * math.log(pxy[i, j] / (px[i] * py[j])))
    return math.fsum(terms)


def mic(x, y):
    """Approximate maximal information coefficient.

    Both axes are equipartitioned by rank and every grid with ``a * b <= n ** 0.6``
    cells is scored by ``I / log(min(a, b))``. Symmetric in its arguments.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    if n != y.size:
        raise ValueError("x and y must have equal length")
    if n < 4 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    best = 0.0
    cache_x, cache_y = {}, {}
    for a, b in _grids(n):
        bx = cache_x.setdefault(a, equipartition(x, a))
        by = cache_y.setdefault(b, equipartition(y, b))
        table = np.zeros((a, b))
        np.add.at(table, (bx, by), 1.0)
        score = _mutual_information(table) / math.log(min(a, b))
        best = max(best, score)
    return float(min(best, 1.0))


def mic_against(x, Y, x_ranks=None, Y_ranks=None):
    """MIC of ``x`` against every column of ``Y`` (vectorized, for redundancy screening).

    ``x_ranks`` / ``Y_ranks`` may pass precomputed ``tie_ranks`` to skip sorting.
    """
    x = np.asarray(x, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n, f = Y.shape
    out = np.zeros(f)
    if n < 4 or np.ptp(x) == 0:
        return out
    rx = tie_ranks(x) if x_ranks is None else x_ranks
    rY = tie_ranks(Y) if Y_ranks is None else Y_ranks
    constant = np.ptp(Y, axis=0) == 0
    cols = np.arange(f)[None, :]
    y_bins = {}
    for a, b in _grids(n):
        bx = (rx * a) // n
        by = y_bins.get(b)
        if by is None:
            by = y_bins[b] = (rY * b) // n
        code = (cols * a + bx[:, None]) * b + by
        table = np.bincount(code.ravel(), minlength=f * a * b).reshape(f, a, b) / n
        px = table.sum(axis=2, keepdims=True)
        py = table.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            term = np.where(table > 0, table * np.log(table / (px * py)), 0.0)
        score = term.sum(axis=(1, 2)) / math.log(min(a, b))
        out = np.maximum(out, score)
    out[constant] = 0.0
    return np.minimum(out, 1.0)
