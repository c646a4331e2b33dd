"""Survival-analysis primitives: Harrell's C, Kaplan-Meier, log-rank and Cox regression."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from ..errors import ConvergenceError, UndefinedStatisticError, ValidationError


@dataclass(frozen=True, eq=False)
class OutcomeVector:
    """Binary events with follow-up time; ``censored`` is the complement of ``labels``."""

    labels: np.ndarray
    time_to_event_months: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        time = np.asarray(self.time_to_event_months, dtype=np.float64)
        if labels.shape != time.shape or labels.ndim != 1:
            raise ValidationError("labels and times must be 1-D arrays of equal length")
        if not np.all(np.isin(labels, (0, 1))):
            raise ValidationError("event labels must be 0/1")
        if np.any(time < 0) or not np.all(np.isfinite(time)):
            raise ValidationError("times must be finite and non-negative")
        object.__setattr__(self, "labels", labels.astype(np.int8))
        object.__setattr__(self, "time_to_event_months", time)

    @property
    def censored(self):
        return 1 - self.labels

    @property
    def events(self):
        return self.labels.astype(bool)

    @property
    def times(self):
        return self.time_to_event_months

    def __len__(self):
        return self.labels.size

    def subset(self, index):
        return OutcomeVector(self.labels[index], self.time_to_event_months[index])


@dataclass(frozen=True)
class KmCurve:
    event_times: np.ndarray
    survival_probs: np.ndarray
    at_risk_counts: np.ndarray

    def at(self, t):
        """Survival probability just after time ``t``."""
        idx = np.searchsorted(self.event_times, t, side="right")
        return 1.0 if idx == 0 else float(self.survival_probs[idx - 1])


def concordance_index(scores, outcome: OutcomeVector):
    """Harrell's C with higher scores meaning earlier events.

    A pair is usable when the shorter of two distinct times ends in an event;
    equal times are never usable. Score ties count one half.
    """
    s = np.asarray(scores, dtype=np.float64)
    t = outcome.times
    e = outcome.events
    if s.shape != t.shape:
        raise ValueError("scores and outcome must have equal length")
    usable = (t[:, None] < t[None, :]) & e[:, None]
    n_pairs = np.count_nonzero(usable)
    if n_pairs == 0:
        raise UndefinedStatisticError("no usable pairs for the concordance index")
    conc = np.count_nonzero(usable & (s[:, None] > s[None, :]))
    ties = np.count_nonzero(usable & (s[:, None] == s[None, :]))
    return (conc + 0.5 * ties) / n_pairs


def kaplan_meier(outcome: OutcomeVector) -> KmCurve:
    t = outcome.times
    e = outcome.events
    if t.size == 0:
        raise ValidationError("Kaplan-Meier needs at least one observation")
    times = np.unique(t[e])
    at_risk = np.array([np.count_nonzero(t >= u) for u in times], dtype=np.int64)
    deaths = np.array([np.count_nonzero((t == u) & e) for u in times], dtype=np.int64)
    surv = np.cumprod(1.0 - deaths / at_risk) if times.size else np.zeros(0)
    return KmCurve(times, surv, at_risk)


def logrank(outcome_a: OutcomeVector, outcome_b: OutcomeVector):
    """Two-group log-rank test; returns ``(chi2, p)`` with p from chi-square(1)."""
    if len(outcome_a) == 0 or len(outcome_b) == 0:
        raise ValidationError("both groups must be non-empty")
    t = np.concatenate([outcome_a.times, outcome_b.times])
    e = np.concatenate([outcome_a.events, outcome_b.events])
    g = np.concatenate([np.zeros(len(outcome_a), bool), np.ones(len(outcome_b), bool)])
    times = np.unique(t[e])
    if times.size == 0:
        return 0.0, 1.0
    obs_minus_exp = 0.0
    var = 0.0
    for u in times:
        risk = t >= u
        n = np.count_nonzero(risk)
        n_a = np.count_nonzero(risk & ~g)
        d = np.count_nonzero((t == u) & e)
        d_a = np.count_nonzero((t == u) & e & ~g)
        obs_minus_exp += d_a - d * n_a / n
        if n > 1:
            var += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1.0)
    if var <= 0.0:
        return 0.0, 1.0
    chi2 = obs_minus_exp ** 2 / var
    return float(chi2), float(sps.chi2.sf(chi2, 1))


# ----------------------------------------------------------------------- Cox

def _breslow_terms(X, time, event, beta):
    """Breslow log partial likelihood, gradient and Hessian."""
    eta = X @ beta
    shift = eta.max()
    w = np.exp(eta - shift)
    order = np.argsort(-time, kind="stable")
    ts = time[order]
    ws = w[order]
    xs = X[order]
    # cumulative risk-set sums over descending time, evaluated at the last index of each tie block
    s0 = np.cumsum(ws)
    s1 = np.cumsum(ws[:, None] * xs, axis=0)
    s2 = np.cumsum(ws[:, None, None] * xs[:, :, None] * xs[:, None, :], axis=0)
    last = np.searchsorted(-ts, -ts, side="right") - 1
    ev = event[order]
    d_idx = np.flatnonzero(ev)
    r = last[d_idx]
    S0 = s0[r]
    S1 = s1[r]
    S2 = s2[r]
    loglik = float(eta[order][d_idx].sum() - (np.log(S0) + shift).sum())
    mean = S1 / S0[:, None]
    grad = xs[d_idx].sum(axis=0) - mean.sum(axis=0)
    hess = -(S2 / S0[:, None, None] - mean[:, :, None] * mean[:, None, :]).sum(axis=0)
    return loglik, grad, hess


def cox_partial_loglik(X, outcome: OutcomeVector, beta):
    X = np.asarray(X, dtype=np.float64).reshape(len(outcome), -1)
    return _breslow_terms(X, outcome.times, outcome.events, np.asarray(beta, dtype=np.float64))


@dataclass(frozen=True)
class CoxModel:
    coefficients: np.ndarray
    linear_predictor: np.ndarray
    loglik: float
    iterations: int


def _identified(model, hess, n_events):
    # a vanishing gradient with vanishing curvature is a flat likelihood ridge, not an optimum
    if np.linalg.eigvalsh(-hess).min() < 1e-6 * n_events:
        raise ConvergenceError("information matrix is near singular (monotone likelihood / separation)",
                               last_iterate=model.coefficients)
    return model


def cox_fit(features, outcome: OutcomeVector, max_iter=100, tol=1e-8) -> CoxModel:
    """Newton-Raphson maximization of the Breslow partial likelihood (with step halving)."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != len(outcome):
        raise ValueError("features and outcome must have the same number of rows")
    if np.count_nonzero(outcome.events) < 2:
        raise ValidationError("Cox regression needs at least two events")
    if np.any(np.ptp(X, axis=0) == 0):
        raise ValidationError("Cox regression got a constant feature column")
    t, e = outcome.times, outcome.events
    beta = np.zeros(X.shape[1])
    ll, grad, hess = _breslow_terms(X, t, e, beta)
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad)) < tol:
            return _identified(CoxModel(beta, X @ beta, ll, it - 1), hess, np.count_nonzero(e))
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular information matrix", last_iterate=beta) from None
        for _ in range(30):
            cand = beta + step
            ll_new, g_new, h_new = _breslow_terms(X, t, e, cand)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12:
                break
            step = step / 2.0
        else:
            raise ConvergenceError("line search failed", last_iterate=beta)
        beta, ll, grad, hess = cand, ll_new, g_new, h_new
        if np.max(np.abs(beta)) > 1e3:
            raise ConvergenceError("coefficients diverge (monotone likelihood / separation)", last_iterate=beta)
    if np.max(np.abs(grad)) < tol:
        return _identified(CoxModel(beta, X @ beta, ll, max_iter), hess, np.count_nonzero(e))
    raise ConvergenceError(f"no convergence after {max_iter} iterations", last_iterate=beta)
