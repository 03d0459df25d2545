"""Accuracy, ROC/AUC and TPR at fixed low FPR for membership scores."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_FPR_TARGETS = (0.1, 0.01)


class MetricsError(ValueError):
    pass


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or s.shape != y.shape:
        raise MetricsError(f"scores {s.shape} and labels {y.shape} must be equal-length vectors")
    if s.size == 0:
        raise MetricsError("empty scored set")
    if not np.all((y == 0) | (y == 1)):
        raise MetricsError("labels must be 0/1")
    return s, y.astype(np.int64)


def _require_both(y: np.ndarray) -> tuple[int, int]:
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("ROC needs both positive and negative examples")
    return n_pos, n_neg


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    s, y = _validate(scores, labels)
    return float(np.mean((s >= threshold).astype(np.int64) == y))


def roc_curve(scores, labels) -> list[tuple[float, float, float]]:
    """(fpr, tpr, threshold) points, from threshold +inf down through every unique score."""
    s, y = _validate(scores, labels)
    n_pos, n_neg = _require_both(y)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(s[1:] != s[:-1])[0], s.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    points = [(0.0, 0.0, float("inf"))]
    points += [(fp[i] / n_neg, tp[i] / n_pos, float(s[last[i]])) for i in range(last.size)]
    return points


def roc_auc(scores, labels) -> tuple[list[tuple[float, float, float]], float]:
    """ROC points and trapezoidal AUC (equals Mann-Whitney with ties as 1/2)."""
    pts = roc_curve(scores, labels)
    fpr = np.array([p[0] for p in pts])
    tpr = np.array([p[1] for p in pts])
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return pts, auc


def auc(scores, labels) -> float:
    return roc_auc(scores, labels)[1]


def tpr_at_fpr(scores, labels, fpr_target: float) -> float:
    """Largest TPR over thresholds whose empirical FPR does not exceed the target."""
    if not 0.0 < fpr_target < 1.0:
        raise MetricsError(f"fpr_target must be in (0, 1), got {fpr_target}")
    pts = roc_curve(scores, labels)
    return float(max(tpr for fpr, tpr, _ in pts if fpr <= fpr_target))


@dataclass
class MetricsReport:
    accuracy: float
    auc: float
    tpr_at_fpr: dict[float, float]
    roc: list[tuple[float, float, float]]
    n_pos: int
    n_neg: int
    feature_set_tag: str = ""
    level: str = "sample"
    extras: dict = field(default_factory=dict)

    def to_dict(self, include_roc: bool = True) -> dict:
        d = {"accuracy": self.accuracy, "auc": self.auc,
             "tpr_at_fpr": {f"{k:g}": v for k, v in sorted(self.tpr_at_fpr.items(), reverse=True)},
             "n_pos": self.n_pos, "n_neg": self.n_neg,
             "feature_set": self.feature_set_tag, "level": self.level}
        if include_roc:
            d["roc"] = [[f, t, th if np.isfinite(th) else None] for f, t, th in self.roc]
        return d


def evaluate_scores(scores, labels, fpr_targets=DEFAULT_FPR_TARGETS, threshold: float = 0.5,
                    feature_set_tag: str = "", level: str = "sample") -> MetricsReport:
    s, y = _validate(scores, labels)
    n_pos, n_neg = _require_both(y)
    pts, area = roc_auc(s, y)
    return MetricsReport(
        accuracy=accuracy(s, y, threshold), auc=area,
        tpr_at_fpr={float(f): tpr_at_fpr(s, y, f) for f in fpr_targets},
        roc=pts, n_pos=n_pos, n_neg=n_neg, feature_set_tag=feature_set_tag, level=level)
