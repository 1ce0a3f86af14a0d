"""Top-1 calibration metrics over a prediction set."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import DomainError
from ..nn import forward, softmax

DEFAULT_BINS = 15
PROB_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class PredictionSet:
    """Per-sample predictions on an evaluation set.

    ``predicted`` and ``confidence`` default to the argmax (lowest index on
    ties) and max of ``probs``.  Post-hoc calibrators that remap confidence
    pass both explicitly so labels stay untouched.
    """

    probs: np.ndarray
    labels: np.ndarray
    logits: np.ndarray | None = None
    predicted: np.ndarray | None = None
    confidence: np.ndarray | None = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
            raise DomainError("probs must be n x C with one label per row")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "labels", labels)
        if self.predicted is None:
            object.__setattr__(self, "predicted", probs.argmax(axis=1))
        if self.confidence is None:
            object.__setattr__(self, "confidence", probs.max(axis=1))

    def __len__(self):
        return self.labels.shape[0]

    @property
    def correct(self) -> np.ndarray:
        return (self.predicted == self.labels).astype(np.float64)

    @property
    def accuracy(self) -> float:
        return float(self.correct.mean())


def predictions_from_logits(logits, labels) -> PredictionSet:
    logits = np.asarray(logits, dtype=np.float64)
    return PredictionSet(softmax(logits, 1.0), labels, logits=logits)


def evaluate(model, data, chunk: int = 4096) -> PredictionSet:
    """Deployment-time (tau = 1) predictions of ``model`` on ``data``."""
    parts = [forward(model, data.features[i:i + chunk])[0] for i in range(0, len(data), chunk)]
    return predictions_from_logits(np.concatenate(parts), data.labels)


@dataclass(frozen=True)
class ReliabilityBins:
    edges: np.ndarray
    count: np.ndarray
    acc: np.ndarray
    conf: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.count.shape[0]

    def rows(self):
        for m in range(self.n_bins):
            yield self.edges[m], self.edges[m + 1], int(self.count[m]), self.acc[m], self.conf[m]


def bin_index(confidence, n_bins: int = DEFAULT_BINS) -> np.ndarray:
    """Equal-width bins over (0, 1]; an exact edge goes to the higher bin, 1.0 to the last."""
    if n_bins < 1:
        raise DomainError("need at least one bin")
    idx = np.floor(np.asarray(confidence, dtype=np.float64) * n_bins).astype(np.int64)
    return np.clip(idx, 0, n_bins - 1)


def reliability_bins(preds: PredictionSet, n_bins: int = DEFAULT_BINS) -> ReliabilityBins:
    if len(preds) == 0:
        raise DomainError("empty prediction set")
    idx = bin_index(preds.confidence, n_bins)
    count = np.bincount(idx, minlength=n_bins)
    acc_sum = np.bincount(idx, weights=preds.correct, minlength=n_bins)
    conf_sum = np.bincount(idx, weights=preds.confidence, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.where(count > 0, acc_sum / count, 0.0)
        conf = np.where(count > 0, conf_sum / count, 0.0)
    return ReliabilityBins(np.linspace(0.0, 1.0, n_bins + 1), count, acc, conf)


def _gaps(preds, n_bins):
    bins = reliability_bins(preds, n_bins)
    return bins.count / len(preds), bins.acc - bins.conf


def ece(preds: PredictionSet, n_bins: int = DEFAULT_BINS) -> float:
    w, gap = _gaps(preds, n_bins)
    return float(np.sum(w * np.abs(gap)))


def sece(preds: PredictionSet, n_bins: int = DEFAULT_BINS) -> float:
    """Signed ECE: negative means over-confident, positive under-confident."""
    w, gap = _gaps(preds, n_bins)
    return float(np.sum(w * gap))


def nll(preds: PredictionSet) -> float:
    if len(preds) == 0:
        raise DomainError("empty prediction set")
    p = preds.probs[np.arange(len(preds)), preds.labels]
    return float(-np.mean(np.log(np.maximum(p, PROB_FLOOR))))


def brier(preds: PredictionSet) -> float:
    if len(preds) == 0:
        raise DomainError("empty prediction set")
    onehot = np.zeros_like(preds.probs)
    onehot[np.arange(len(preds)), preds.labels] = 1.0
    return float(np.mean(np.sum((preds.probs - onehot) ** 2, axis=1)))


@dataclass(frozen=True)
class CalibrationReport:
    accuracy: float
    ece: float
    sece: float
    nll: float
    brier: float
    bins: ReliabilityBins = field(repr=False)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("accuracy", "ece", "sece", "nll", "brier")}


def calibration_report(preds: PredictionSet, n_bins: int = DEFAULT_BINS) -> CalibrationReport:
    bins = reliability_bins(preds, n_bins)
    w = bins.count / len(preds)
    gap = bins.acc - bins.conf
    return CalibrationReport(
        accuracy=preds.accuracy,
        ece=float(np.sum(w * np.abs(gap))),
        sece=float(np.sum(w * gap)),
        nll=nll(preds),
        brier=brier(preds),
        bins=bins,
    )


def write_reliability_csv(path, bins: ReliabilityBins) -> None:
    from ..io import fmt

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count", "acc", "conf"])
        for lo, hi, n, a, c in bins.rows():
            w.writerow([fmt(lo), fmt(hi), n, fmt(a), fmt(c)])
