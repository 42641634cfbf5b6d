"""Confusion matrices and accuracy / precision / recall / F1.

The binary view treats class 0 ("benign") as negative and every attack class
as positive. Ratios with a zero denominator are reported as 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ConfusionMatrix:
    """``matrix[true, predicted]`` counts."""

    matrix: np.ndarray
    negative_class: int = 0

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    @property
    def tn(self) -> int:
        n = self.negative_class
        return int(self.matrix[n, n])

    @property
    def fp(self) -> int:
        n = self.negative_class
        return int(self.matrix[n].sum() - self.matrix[n, n])

    @property
    def fn(self) -> int:
        n = self.negative_class
        return int(self.matrix[:, n].sum() - self.matrix[n, n])

    @property
    def tp(self) -> int:
        return self.total - self.tn - self.fp - self.fn

    def to_dict(self) -> dict:
        return {"matrix": self.matrix.tolist(), "tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


def confusion(preds, labels, positive_class: int | None = None, num_classes: int | None = None) -> ConfusionMatrix:
    """Count (label, prediction) pairs.

    With ``positive_class`` the result is a 2x2 one-vs-rest matrix for that
    class; otherwise it is K x K.
    """
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.size} predictions vs {labels.size} labels")
    if preds.size == 0:
        raise ValueError("cannot build a confusion matrix from empty input")
    if min(preds.min(), labels.min()) < 0:
        raise ValueError("class indices must be non-negative")
    if positive_class is not None:
        preds = (preds == positive_class).astype(np.int64)
        labels = (labels == positive_class).astype(np.int64)
        k = 2
    else:
        k = max(int(preds.max()), int(labels.max())) + 1
        if num_classes is not None:
            if k > num_classes:
                raise ValueError(f"class index {k - 1} out of range for {num_classes} classes")
            k = num_classes
    m = np.bincount(labels * k + preds, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(m)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def _prf(tp: float, fp: float, fn: float) -> tuple[float, float, float]:
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    return p, r, _ratio(2 * p * r, p + r)


def scores(cm: ConfusionMatrix) -> dict[str, float]:
    """Binary attack-vs-benign accuracy, precision, recall and F1."""
    if cm.total <= 0:
        raise ValueError("confusion matrix is empty")
    p, r, f1 = _prf(cm.tp, cm.fp, cm.fn)
    return {"accuracy": (cm.tp + cm.tn) / cm.total, "precision": p, "recall": r, "f1": f1}


def macro_scores(cm: ConfusionMatrix) -> dict[str, float]:
    """Multiclass accuracy plus per-class precision/recall/F1 averaged with equal weight."""
    m = cm.matrix
    if m.sum() <= 0:
        raise ValueError("confusion matrix is empty")
    per = []
    for c in range(m.shape[0]):
        tp = m[c, c]
        per.append(_prf(tp, m[:, c].sum() - tp, m[c].sum() - tp))
    per = np.array(per)
    return {"accuracy": float(np.trace(m) / m.sum()), "precision": float(per[:, 0].mean()),
            "recall": float(per[:, 1].mean()), "f1": float(per[:, 2].mean())}


def report(cm: ConfusionMatrix, labels: list[str] | None = None) -> dict:
    """JSON-ready report: binary scores at top level, macro block alongside."""
    out = dict(scores(cm))
    out["confusion"] = cm.to_dict()
    out["macro"] = macro_scores(cm)
    if labels is not None:
        out["labels"] = list(labels)
    return out
