"""Post-hoc calibrators as scikit-learn estimators.

Every calibrator is fitted on ``(logits, labels)`` of a held-out set and
exposes ``predict_confidence(logits)``; temperature scaling additionally
rescales full logit vectors.  ``apply_calibrator`` turns a fitted
calibrator plus a :class:`PredictionSet` into a recalibrated set whose
predicted labels are unchanged.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.special import expit, logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..exceptions import DomainError
from ..nn import log_softmax, softmax
from .metrics import DEFAULT_BINS, PredictionSet, bin_index

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def _check_logits_labels(logits, y):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise DomainError("logits must be an n x C matrix")
    if logits.shape[0] == 0:
        raise DomainError("calibration set is empty")
    if y is None:
        return logits, None
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (logits.shape[0],):
        raise DomainError("one label per logit row is required")
    return logits, y


def top1(logits):
    """Confidence and correctness inputs shared by the score-based calibrators."""
    p = softmax(logits, 1.0)
    return p.argmax(axis=1), p.max(axis=1)


def logit_margin(logits) -> np.ndarray:
    """Top-1 logit minus log-sum-exp of the remaining logits."""
    logits = np.asarray(logits, dtype=np.float64)
    top = logits.argmax(axis=1)
    rest = logits.copy()
    rest[np.arange(logits.shape[0]), top] = -np.inf
    return logits[np.arange(logits.shape[0]), top] - logsumexp(rest, axis=1)


def _degenerate(correct) -> bool:
    return correct.min() == correct.max()


def golden_section(f, lo, hi, tol):
    """Minimise a unimodal ``f`` on ``[lo, hi]``; returns ``(x, trace)``.

    ``trace`` holds the best interior objective after each iteration (it
    never increases because the better interior point is always retained).
    """
    c = hi - _INV_PHI * (hi - lo)
    d = lo + _INV_PHI * (hi - lo)
    fc, fd = f(c), f(d)
    trace = [min(fc, fd)]
    while hi - lo > tol:
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - _INV_PHI * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _INV_PHI * (hi - lo)
            fd = f(d)
        trace.append(min(fc, fd))
    x = c if fc <= fd else d
    return x, trace


class TemperatureScaling(BaseEstimator):
    """Single temperature ``T`` for ``softmax(z / T)``, fitted by minimising NLL."""

    def __init__(self, t_min=0.05, t_max=20.0, tol=1e-4):
        self.t_min = t_min
        self.t_max = t_max
        self.tol = tol

    def _nll(self, logits, y, T):
        lp = log_softmax(logits, T)
        return float(-np.mean(lp[np.arange(y.size), y]))

    def fit(self, logits, y):
        logits, y = _check_logits_labels(logits, y)
        T, trace = golden_section(lambda t: self._nll(logits, y, t), self.t_min, self.t_max, self.tol)
        self.temperature_ = float(T)
        self.nll_trace_ = trace
        return self

    def transform(self, logits):
        check_is_fitted(self, "temperature_")
        return np.asarray(logits, dtype=np.float64) / self.temperature_

    def predict_proba(self, logits):
        check_is_fitted(self, "temperature_")
        return softmax(np.asarray(logits, dtype=np.float64), self.temperature_)

    def predict_confidence(self, logits):
        return self.predict_proba(logits).max(axis=1)


class PlattScaling(BaseEstimator):
    """``sigmoid(a * margin + b)`` as the probability that the top-1 label is right.

    ``(a, b)`` minimise binary NLL by gradient descent with backtracking; the
    margin is standardised internally for conditioning.
    """

    def __init__(self, max_iter=5000, tol=1e-9):
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, logits, y):
        logits, y = _check_logits_labels(logits, y)
        pred, _ = top1(logits)
        t = (pred == y).astype(np.float64)
        s = logit_margin(logits)
        self.identity_ = _degenerate(t)
        if self.identity_:
            warnings.warn("calibration set has a single outcome class; Platt map left as identity")
            self.a_, self.b_ = 1.0, 0.0
            return self
        mu, sd = s.mean(), s.std() or 1.0
        u = (s - mu) / sd
        w = np.zeros(2)

        def loss(w):
            q = w[0] * u + w[1]
            return float(np.mean(np.logaddexp(0.0, q) - t * q))

        cur = loss(w)
        for _ in range(self.max_iter):
            r = expit(w[0] * u + w[1]) - t
            g = np.array([np.mean(r * u), np.mean(r)])
            if np.linalg.norm(g) < self.tol:
                break
            step = 4.0
            while step > 1e-12:
                cand = w - step * g
                new = loss(cand)
                if new <= cur - 0.5 * step * (g @ g):
                    break
                step *= 0.5
            else:
                break
            w, cur = cand, new
        self.a_ = float(w[0] / sd)
        self.b_ = float(w[1] - w[0] * mu / sd)
        return self

    def predict_confidence(self, logits):
        check_is_fitted(self, "a_")
        logits, _ = _check_logits_labels(logits, None)
        if self.identity_:
            return top1(logits)[1]
        return expit(self.a_ * logit_margin(logits) + self.b_)


def pool_adjacent_violators(y, w=None):
    """Non-decreasing least-squares fit to ``y`` (in the given order)."""
    y = np.asarray(y, dtype=np.float64)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=np.float64)
    vals, wts, sizes = [], [], []
    for yi, wi in zip(y, w):
        vals.append(yi)
        wts.append(wi)
        sizes.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            tw = wts[-2] + wts[-1]
            v = (vals[-2] * wts[-2] + vals[-1] * wts[-1]) / tw
            sz = sizes[-2] + sizes[-1]
            del vals[-1], wts[-1], sizes[-1]
            vals[-1], wts[-1], sizes[-1] = v, tw, sz
    return np.repeat(vals, sizes)


class IsotonicCalibration(BaseEstimator):
    """Monotone step map from score to target, fitted by pool-adjacent-violators.

    Samples with equal scores are pooled before fitting.  A new score takes
    the value of the last fitted knot at or below it (the first knot below
    the range).
    """

    def fit(self, scores, targets):
        scores = np.asarray(scores, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        if scores.size == 0:
            raise DomainError("calibration set is empty")
        knots, inv = np.unique(scores, return_inverse=True)
        w = np.bincount(inv).astype(np.float64)
        mean = np.bincount(inv, weights=targets) / w
        self.knots_ = knots
        self.values_ = pool_adjacent_violators(mean, w)
        return self

    def transform(self, scores):
        check_is_fitted(self, "knots_")
        idx = np.searchsorted(self.knots_, np.asarray(scores, dtype=np.float64), side="right") - 1
        return self.values_[np.clip(idx, 0, self.knots_.size - 1)]


class IsotonicConfidence(BaseEstimator):
    """Isotonic regression of top-1 correctness on top-1 confidence."""

    def fit(self, logits, y):
        logits, y = _check_logits_labels(logits, y)
        pred, conf = top1(logits)
        correct = (pred == y).astype(np.float64)
        self.identity_ = _degenerate(correct)
        if self.identity_:
            warnings.warn("calibration set has a single outcome class; isotonic map left as identity")
            return self
        self.iso_ = IsotonicCalibration().fit(conf, correct)
        return self

    def predict_confidence(self, logits):
        check_is_fitted(self, "identity_")
        _, conf = top1(logits)
        return conf if self.identity_ else self.iso_.transform(conf)


class HistogramBinning(BaseEstimator):
    """Replace confidence by the empirical top-1 accuracy of its bin; empty bins pass through."""

    def __init__(self, n_bins=DEFAULT_BINS):
        self.n_bins = n_bins

    def fit(self, logits, y):
        logits, y = _check_logits_labels(logits, y)
        pred, conf = top1(logits)
        correct = (pred == y).astype(np.float64)
        self.identity_ = _degenerate(correct)
        if self.identity_:
            warnings.warn("calibration set has a single outcome class; histogram map left as identity")
        idx = bin_index(conf, self.n_bins)
        count = np.bincount(idx, minlength=self.n_bins)
        hits = np.bincount(idx, weights=correct, minlength=self.n_bins)
        self.bin_count_ = count
        self.bin_accuracy_ = np.where(count > 0, hits / np.maximum(count, 1), np.nan)
        return self

    def predict_confidence(self, logits):
        check_is_fitted(self, "bin_accuracy_")
        _, conf = top1(logits)
        if self.identity_:
            return conf
        mapped = self.bin_accuracy_[bin_index(conf, self.n_bins)]
        return np.where(np.isnan(mapped), conf, mapped)


CALIBRATORS = {
    "temperature": TemperatureScaling,
    "platt": PlattScaling,
    "isotonic": IsotonicConfidence,
    "histogram": HistogramBinning,
}


def fit_calibrator(kind: str, logits, labels):
    try:
        cls = CALIBRATORS[kind]
    except KeyError:
        raise DomainError(f"unknown calibrator {kind!r}; choose from {sorted(CALIBRATORS)}") from None
    return cls().fit(logits, labels)


def apply_calibrator(cal, preds: PredictionSet) -> PredictionSet:
    """Recalibrated copy of ``preds``; predicted labels are never changed."""
    if preds.logits is None:
        raise DomainError("calibration needs the raw logits")
    if isinstance(cal, TemperatureScaling):
        return PredictionSet(cal.predict_proba(preds.logits), preds.labels,
                             logits=cal.transform(preds.logits), predicted=preds.predicted)
    new_conf = np.clip(cal.predict_confidence(preds.logits), 0.0, 1.0)
    probs = preds.probs.copy()
    rows = np.arange(len(preds))
    old = probs[rows, preds.predicted]
    rest = 1.0 - old
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(rest > 0, (1.0 - new_conf) / rest, 0.0)
    probs *= scale[:, None]
    # remaining mass spread evenly when the original top-1 held everything
    flat = rest <= 0
    if np.any(flat):
        C = probs.shape[1]
        probs[flat] = ((1.0 - new_conf[flat]) / (C - 1))[:, None]
    probs[rows, preds.predicted] = new_conf
    return PredictionSet(probs, preds.labels, logits=preds.logits,
                         predicted=preds.predicted, confidence=new_conf)
