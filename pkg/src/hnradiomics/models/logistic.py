"""Logistic regression fitted by Newton's method, batched over many weighted subsamples.

A bootstrap draw split into imbalance partitions gives many small fits on rows
of the same design matrix. Each fit is described by a vector of row indices
(repeats allowed); all of them are solved together with stacked Newton steps.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import expit

from .partition import make_partitions

RIDGE_FALLBACK = 1e-4
SEPARATION_ETA = 25.0


def add_intercept(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return np.hstack([np.ones((X.shape[0], 1)), X])


def logistic_loglik(Xd, y, beta, weights=None, ridge=0.0):
    """Weighted log-likelihood (intercept unpenalized), its gradient and Hessian."""
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=np.float64)
    eta = Xd @ beta
    mu = expit(eta)
    pen = np.ones(Xd.shape[1])
    pen[0] = 0.0
    ll = float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))) - 0.5 * ridge * np.sum(pen * beta ** 2))
    grad = Xd.T @ (w * (y - mu)) - ridge * pen * beta
    hess = -(Xd.T * (w * mu * (1.0 - mu))) @ Xd - ridge * np.diag(pen)
    return ll, grad, hess


def _gather(index_sets):
    uniq, counts = [], []
    for idx in index_sets:
        u, c = np.unique(np.asarray(idx, dtype=np.int64), return_counts=True)
        uniq.append(u)
        counts.append(c)
    m = max(len(u) for u in uniq)
    F = len(uniq)
    rows = np.zeros((F, m), dtype=np.int64)
    w = np.zeros((F, m))
    for k, (u, c) in enumerate(zip(uniq, counts)):
        rows[k, :len(u)] = u
        w[k, :len(u)] = c
    return rows, w, np.array([len(u) for u in uniq], dtype=np.int64)


@njit(cache=True)
def _loglik_eta(Xd, y, rows, w, m, beta, ridge, eta):
    d = Xd.shape[1]
    ll = 0.0
    for i in range(m):
        r = rows[i]
        e = 0.0
        for a in range(d):
            e += Xd[r, a] * beta[a]
        eta[i] = e
        # log(1 + exp(e)) without overflow
        lse = e + np.log1p(np.exp(-e)) if e > 0 else np.log1p(np.exp(e))
        ll += w[i] * (y[r] * e - lse)
    for a in range(1, d):
        ll -= 0.5 * ridge * beta[a] * beta[a]
    return ll


@njit(cache=True)
def _cholesky_solve(H, g, out):
    """Solve H x = g for symmetric positive definite H; False if H is not PD."""
    d = H.shape[0]
    L = np.zeros((d, d))
    for i in range(d):
        for j in range(i + 1):
            s = H[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 1e-300:
                    return False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    z = np.empty(d)
    for i in range(d):
        s = g[i]
        for k in range(i):
            s -= L[i, k] * z[k]
        z[i] = s / L[i, i]
    for i in range(d - 1, -1, -1):
        s = z[i]
        for k in range(i + 1, d):
            s -= L[k, i] * out[k]
        out[i] = s / L[i, i]
    return True


@njit(cache=True)
def _newton_one(Xd, y, rows, w, m, ridge, max_iter, tol, stop_eta, beta):
    """Newton-Raphson with step halving for one weighted fit, in place on ``beta``.

    Returns (converged, max |eta| over rows, stopped_for_separation).
    """
    d = Xd.shape[1]
    eta = np.empty(m)
    eta_new = np.empty(m)
    grad = np.empty(d)
    H = np.empty((d, d))
    step = np.empty(d)
    cand = np.empty(d)
    ll = _loglik_eta(Xd, y, rows, w, m, beta, ridge, eta)
    for it in range(max_iter + 1):
        for a in range(d):
            grad[a] = -ridge * beta[a] if a > 0 else 0.0
            for b in range(d):
                H[a, b] = 0.0
            if a > 0:
                H[a, a] = ridge
        big = 0.0
        for i in range(m):
            r = rows[i]
            mu = 1.0 / (1.0 + np.exp(-eta[i]))
            res = w[i] * (y[r] - mu)
            v = w[i] * mu * (1.0 - mu)
            for a in range(d):
                xa = Xd[r, a]
                grad[a] += xa * res
                for b in range(a + 1):
                    H[a, b] += v * xa * Xd[r, b]
            if abs(eta[i]) > big:
                big = abs(eta[i])
        gmax = 0.0
        for a in range(d):
            gmax = max(gmax, abs(grad[a]))
        if gmax < tol:
            return True, big, False
        if big > stop_eta or it == max_iter:
            return False, big, big > stop_eta
        for a in range(d):
            for b in range(a + 1, d):
                H[a, b] = H[b, a]
        if not _cholesky_solve(H, grad, step):
            jitter = 1e-10
            for a in range(d):
                jitter = max(jitter, 1e-10 * H[a, a])
            for a in range(d):
                H[a, a] += jitter
            if not _cholesky_solve(H, grad, step):
                return False, big, False
        thresh = ll - 1e-10 * (1.0 + abs(ll))
        for _ in range(31):
            for a in range(d):
                cand[a] = beta[a] + step[a]
            ll_new = _loglik_eta(Xd, y, rows, w, m, cand, ridge, eta_new)
            if ll_new >= thresh:
                break
            for a in range(d):
                step[a] *= 0.5
        for a in range(d):
            beta[a] = cand[a]
        for i in range(m):
            eta[i] = eta_new[i]
        ll = ll_new
    return False, big, False


@njit(cache=True)
def _fit_batch(Xd, y, rows, w, sizes, max_iter, tol, ridge_fallback, separation_eta):
    F = rows.shape[0]
    d = Xd.shape[1]
    coef = np.zeros((F, d))
    converged = np.zeros(F, dtype=np.bool_)
    ridged = np.zeros(F, dtype=np.bool_)
    beta = np.empty(d)
    # each fit runs on a contiguous copy of its rows
    cap = rows.shape[1]
    Xl = np.empty((cap, d))
    yl = np.empty(cap)
    local = np.arange(cap)
    for k in range(F):
        m = sizes[k]
        for i in range(m):
            r = rows[k, i]
            yl[i] = y[r]
            for a in range(d):
                Xl[i, a] = Xd[r, a]
        beta[:] = 0.0
        conv, big, _ = _newton_one(Xl, yl, local, w[k], m, 0.0, max_iter, tol, separation_eta, beta)
        finite = True
        for a in range(d):
            if not np.isfinite(beta[a]):
                finite = False
        if conv and big <= separation_eta and finite:
            coef[k] = beta
            converged[k] = True
            continue
        # the penalized problem is strictly concave: warm-start from the last finite iterate
        if not finite:
            beta[:] = 0.0
        conv, _, _ = _newton_one(Xl, yl, local, w[k], m, ridge_fallback, 2 * max_iter, tol, np.inf, beta)
        coef[k] = beta
        converged[k] = conv
        ridged[k] = True
    return coef, converged, ridged


@dataclass
class BatchFit:
    coefficients: np.ndarray
    converged: np.ndarray
    ridge: np.ndarray


def gather_index_sets(index_sets):
    """Unique rows, repeat counts and row counts per index set (reusable across designs)."""
    return _gather(index_sets)


def fit_logistic_batch(Xd, y, index_sets, max_iter=50, tol=1e-8, ridge_fallback=RIDGE_FALLBACK,
                       gathered=None) -> BatchFit:
    """Fit one logistic model per index set (rows of ``Xd`` with intercept column).

    Maximum likelihood first; a fit that does not converge within ``max_iter``,
    or whose linear predictor exceeds SEPARATION_ETA in magnitude at any
    iterate (quasi-separation), is refitted with a small ridge penalty and flagged.
    ``gathered`` may carry a precomputed ``gather_index_sets(index_sets)``.
    """
    Xd = np.ascontiguousarray(Xd, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rows, wg, sizes = _gather(index_sets) if gathered is None else gathered
    beta, conv, ridge = _fit_batch(Xd, y, rows, wg, sizes, max_iter, tol, ridge_fallback, SEPARATION_ETA)
    return BatchFit(beta, conv, ridge)


def fit_logistic(X, y, max_iter=50, tol=1e-8):
    """Plain (single) logistic fit; returns intercept-first coefficients."""
    Xd = add_intercept(X)
    res = fit_logistic_batch(Xd, y, [np.arange(len(y))], max_iter, tol)
    return res.coefficients[0]


@dataclass
class EnsembleLogisticModel:
    """Averaged logistic coefficients (intercept first) over imbalance partitions.

    ``means``/``scales`` hold the z-standardization applied to raw features
    before the linear predictor is formed.
    """

    feature_names: list
    coefficients: np.ndarray
    means: np.ndarray = None
    scales: np.ndarray = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        d = len(self.feature_names)
        if self.coefficients.shape != (d + 1,):
            raise ValueError("coefficient vector must have one entry per feature plus intercept")
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("coefficients must be finite")
        self.means = np.zeros(d) if self.means is None else np.asarray(self.means, dtype=np.float64)
        self.scales = np.ones(d) if self.scales is None else np.asarray(self.scales, dtype=np.float64)

    def linear_predictor(self, X):
        Z = (np.asarray(X, dtype=np.float64).reshape(-1, len(self.feature_names)) - self.means) / self.scales
        return self.coefficients[0] + Z @ self.coefficients[1:]

    def probability(self, X):
        return expit(self.linear_predictor(X))

    def to_dict(self):
        return {
            "type": "ensemble_logistic",
            "feature_names": list(self.feature_names),
            "intercept": float(self.coefficients[0]),
            "coefficients": [float(c) for c in self.coefficients[1:]],
            "standardization": {
                "means": [float(v) for v in self.means],
                "scales": [float(v) for v in self.scales],
            },
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            feature_names=list(doc["feature_names"]),
            coefficients=np.array([doc["intercept"]] + list(doc["coefficients"])),
            means=np.array(doc["standardization"]["means"]),
            scales=np.array(doc["standardization"]["scales"]),
            provenance=doc.get("provenance", {}),
        )


def partition_index_sets(labels, index, rng):
    """Imbalance partitions of the sample ``index`` (training-row indices, repeats allowed)."""
    index = np.asarray(index)
    scheme = make_partitions(np.asarray(labels)[index], rng)
    return [index[p] for p in scheme.partitions]


def fit_ensemble_logistic(X, labels, rng, feature_names=None) -> EnsembleLogisticModel:
    """One logistic fit per imbalance partition; coefficients averaged. ``X`` must already be standardized."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    labels = np.asarray(labels)
    sets = partition_index_sets(labels, np.arange(len(labels)), rng)
    res = fit_logistic_batch(add_intercept(X), labels, sets)
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
    return EnsembleLogisticModel(
        names,
        res.coefficients.mean(axis=0),
        provenance={"partitions": len(sets), "ridge_fallbacks": int(res.ridge.sum())},
    )
