"""Detection metrics with anomaly (credibility label 0) as the positive class.

Scores are credibility scores: a high score means trustworthy, so a point is
flagged anomalous when its score is at or below the threshold.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    auc: float | None
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def auc_score(scores, labels) -> float:
    """Probability that a random anomaly scores below a random normal point
    (Mann-Whitney statistic with tied ranks averaged)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    pos = y == 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC is undefined when only one class is present")
    ranks = rankdata(-s)   # anomalies should have the lowest credibility
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def compute_metrics(scores, labels, zeta: float) -> MetricsReport:
    """Precision, recall, F1 and AUC for thresholded credibility scores.

    With a single class present the AUC is reported as ``None``.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise MetricError(f"scores {s.shape} and labels {y.shape} differ in size")
    if s.size == 0:
        raise MetricError("no points to score")
    pred_anom = s <= zeta
    true_anom = y == 0
    tp = int(np.sum(pred_anom & true_anom))
    fp = int(np.sum(pred_anom & ~true_anom))
    fn = int(np.sum(~pred_anom & true_anom))
    tn = int(s.size - tp - fp - fn)
    p, r, f = _prf(tp, fp, fn)
    try:
        auc = auc_score(s, y)
    except MetricError:
        auc = None
    return MetricsReport(p, r, f, auc, float(zeta), tp, fp, tn, fn)


def f1_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """F1 at every candidate threshold: midpoints between sorted unique scores,
    plus one point above the top score (flag everything) when that lies below 1."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    u = np.unique(s)
    if len(u) < 2:
        return np.empty(0), np.empty(0)
    cand = (u[:-1] + u[1:]) / 2
    if u[-1] < 1.0:
        cand = np.append(cand, (u[-1] + 1.0) / 2)
    order = np.argsort(s, kind="stable")
    s_sorted, anom_sorted = s[order], (y[order] == 0)
    n_pos = int(anom_sorted.sum())
    # points with score <= c are flagged: counts via searchsorted on sorted scores
    k = np.searchsorted(s_sorted, cand, side="right")
    cum_tp = np.concatenate([[0], np.cumsum(anom_sorted)])
    tp = cum_tp[k]
    fp = k - tp
    fn = n_pos - tp
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    return cand, f1


def calibrate_threshold(scores, labels) -> float:
    """Threshold maximising F1, ties resolved toward the smaller threshold."""
    y = np.asarray(labels).ravel()
    if not ((y == 0).any() and (y == 1).any()):
        raise MetricError("threshold calibration needs both classes")
    cand, f1 = f1_curve(scores, labels)
    if cand.size == 0:
        warnings.warn("all scores are equal; falling back to threshold 0.5", RuntimeWarning)
        return 0.5
    return float(cand[int(np.argmax(f1))])
