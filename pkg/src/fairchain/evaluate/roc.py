"""ROC curves and AUC with tied scores grouped into a single threshold step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError


@dataclass(frozen=True, eq=False)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # first entry is +inf (nothing predicted positive)
    auc: float

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.fpr, self.tpr])

    def to_csv_text(self) -> str:
        lines = ["fpr,tpr,threshold"]
        for f, t, h in zip(self.fpr, self.tpr, self.thresholds):
            lines.append(f"{float(f)!r},{float(t)!r},{'inf' if np.isinf(h) else repr(float(h))}")
        return "\n".join(lines) + "\n"


def roc_and_auc(scores, labels) -> RocCurve:
    """Sweep every distinct score as a threshold (predict positive when score >= threshold).

    The trapezoid area is accumulated in integers, so it equals the pairwise
    concordance probability with ties counted one half.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValidationError(f"{s.size} scores but {y.size} labels")
    if not np.all(np.isfinite(s)):
        raise ValidationError("scores must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("labels must be binary 0/1")
    y = y.astype(np.int64)
    P = int(y.sum())
    N = int(y.size - P)
    if P == 0 or N == 0:
        raise ValidationError("ROC needs both classes among the labels")
    levels, inv = np.unique(s, return_inverse=True)
    pos = np.bincount(inv[y == 1], minlength=levels.size)[::-1].astype(np.int64)
    neg = np.bincount(inv[y == 0], minlength=levels.size)[::-1].astype(np.int64)
    tp = np.concatenate([[0], np.cumsum(pos)])
    fp = np.concatenate([[0], np.cumsum(neg)])
    # each step adds a trapezoid of width neg_k and heights tp_{k-1}, tp_k
    twice_area = int(np.sum(neg * (tp[:-1] + tp[1:]), dtype=np.int64))
    auc = twice_area / (2 * P * N)
    return RocCurve(fp / N, tp / P, np.concatenate([[np.inf], levels[::-1]]), float(auc))
