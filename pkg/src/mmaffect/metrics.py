"""Competition evaluation metrics.

CCC for the valence/arousal regression, macro F1 for classification and
multi-label detection, mean Pearson correlation for per-video reaction
intensities. All metrics skip masked frames entirely; degenerate cases
(constant series, absent classes) resolve to the documented conventions
rather than NaN.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import INVALID, Task


class TooShort(ValueError):
    """Not enough valid points to correlate."""


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson r; defined as 0 when either series is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"need equal-length 1-d series, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise TooShort(f"need at least 2 points, got {x.size}")
    xd = x - x.mean()
    yd = y - y.mean()
    denom = np.sqrt((xd * xd).sum() * (yd * yd).sum())
    if denom == 0.0:
        return 0.0
    return float((xd * yd).sum() / denom)


def ccc(x: np.ndarray, y: np.ndarray) -> float:
    """Concordance correlation: 2 cov / (var_x + var_y + (mean gap)^2).

    Population (1/N) moments. When the denominator degenerates to zero
    the series are both the same constant, which counts as perfect
    agreement (1.0); a zero numerator over a nonzero denominator is
    simply 0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"need equal-length 1-d series, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise TooShort(f"need at least 2 points, got {x.size}")
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    cov = ((x - mx) * (y - my)).mean()
    denom = vx + vy + (mx - my) ** 2
    if denom == 0.0:
        return 1.0 if np.array_equal(x, y) else 0.0
    return float(2.0 * cov / denom)


def mean_ccc(
    va_pred: np.ndarray, va_true: np.ndarray, mask: np.ndarray
) -> tuple[float, float, float]:
    """CCC per affect dimension over valid frames, plus their mean."""
    va_pred = np.asarray(va_pred, dtype=np.float64)
    va_true = np.asarray(va_true, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if va_pred.shape != va_true.shape or va_pred.ndim != 2 or va_pred.shape[1] != 2:
        raise ValueError(f"need matching (N, 2) arrays, got {va_pred.shape} and {va_true.shape}")
    ccc_v = ccc(va_pred[m, 0], va_true[m, 0])
    ccc_a = ccc(va_pred[m, 1], va_true[m, 1])
    return ccc_v, ccc_a, (ccc_v + ccc_a) / 2.0


def per_class_f1(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> list[float]:
    """One-vs-rest F1 per class; absent classes score 0."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError(f"need equal-length label vectors, got {y_true.shape} and {y_pred.shape}")
    scores = []
    for c in range(n_classes):
        tp = int(np.sum((y_true == c) & (y_pred == c)))
        fp = int(np.sum((y_true != c) & (y_pred == c)))
        fn = int(np.sum((y_true == c) & (y_pred != c)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2.0 * precision * recall / (precision + recall) if precision + recall else 0.0)
    return scores


def macro_f1(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> float:
    """Unweighted mean over classes of 2PR/(P+R).

    A class absent from both truth and prediction scores 0, which keeps
    the metric deterministic and penalizes degenerate predictors.
    """
    return float(np.mean(per_class_f1(y_true, y_pred, n_classes)))


def binary_f1(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """F1 of the positive class for 0/1 vectors."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0


def au_f1_scores(y_true: np.ndarray, probs: np.ndarray, threshold: float = 0.5) -> list[float]:
    """Positive-class F1 per AU; entries labeled -1 are skipped."""
    y_true = np.asarray(y_true, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    if y_true.shape != probs.shape or y_true.ndim != 2:
        raise ValueError(f"need matching (N, n_au) arrays, got {y_true.shape} and {probs.shape}")
    preds = (probs >= threshold).astype(np.int64)
    scores = []
    for i in range(y_true.shape[1]):
        valid = y_true[:, i] != INVALID
        scores.append(binary_f1(y_true[valid, i], preds[valid, i]))
    return scores


def au_macro_f1(y_true: np.ndarray, probs: np.ndarray, threshold: float = 0.5) -> float:
    """Mean over AUs of the positive-class F1, probabilities thresholded."""
    return float(np.mean(au_f1_scores(y_true, probs, threshold)))


def pcc_per_dim(y_true: np.ndarray, y_pred: np.ndarray) -> list[float]:
    """Pearson r of each reaction dimension across videos."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape or y_true.ndim != 2:
        raise ValueError(f"need matching (V, n_dims) arrays, got {y_true.shape} and {y_pred.shape}")
    if y_true.shape[0] < 2:
        raise TooShort(f"need at least 2 videos, got {y_true.shape[0]}")
    return [pearson(y_true[:, j], y_pred[:, j]) for j in range(y_true.shape[1])]


def mean_pcc(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Mean over reaction dimensions of Pearson r across videos."""
    return float(np.mean(pcc_per_dim(y_true, y_pred)))


@dataclass
class EvalReport:
    """Per-task evaluation scores plus the count of frames/videos used."""

    task: Task
    per_dimension: dict[str, float]
    aggregate: float
    n_valid: int
    extras: dict[str, float] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"task={self.task.value}", f"n_valid={self.n_valid}"]
        for k, v in self.per_dimension.items():
            lines.append(f"{k}={v:.6f}")
        for k, v in self.extras.items():
            lines.append(f"{k}={v:.6f}")
        lines.append(f"aggregate={self.aggregate:.6f}")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(
            {
                "task": self.task.value,
                "n_valid": self.n_valid,
                "per_dimension": self.per_dimension,
                "extras": self.extras,
                "aggregate": self.aggregate,
            },
            sort_keys=True,
        )
