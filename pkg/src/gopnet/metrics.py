"""Confusion matrix, accuracy and macro precision/recall/F1 (in percent)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCORE_NAMES = ("accuracy", "precision", "recall", "f1")


@dataclass(frozen=True)
class Scores:
    accuracy: float
    precision: float
    recall: float
    f1: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.accuracy, self.precision, self.recall, self.f1)


def confusion(true_labels, predicted_labels, n_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    t = np.asarray(true_labels, dtype=int)
    p = np.asarray(predicted_labels, dtype=int)
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.shape} vs {p.shape}")
    for name, arr in (("true", t), ("predicted", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"{name} label outside 0..{n_classes - 1}")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def _safe_div(num, den):
    return np.divide(num, den, out=np.zeros_like(num, dtype=float), where=den > 0)


def per_class_scores(cm) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cm = np.asarray(cm, dtype=float)
    tp = np.diag(cm)
    precision = _safe_div(tp, cm.sum(axis=0))
    recall = _safe_div(tp, cm.sum(axis=1))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return precision, recall, f1


def macro_scores(cm) -> Scores:
    """Accuracy and unweighted class means of precision, recall and F1.

    Macro F1 is the mean of per-class F1, not the F1 of mean precision and
    recall. A class with a zero denominator scores 0.
    """
    cm = np.asarray(cm)
    total = cm.sum()
    if cm.size == 0 or total == 0:
        raise ValueError("confusion matrix holds no samples")
    precision, recall, f1 = per_class_scores(cm)
    return Scores(float(100.0 * np.trace(cm) / total), float(100.0 * precision.mean()),
                  float(100.0 * recall.mean()), float(100.0 * f1.mean()))


def score(true_labels, predicted_labels, n_classes: int) -> Scores:
    return macro_scores(confusion(true_labels, predicted_labels, n_classes))


def format_report(rows: list[tuple[str, Scores]], delimiter: str = ",") -> str:
    """Delimited report: one line per fold plus their mean, unrounded."""
    lines = [delimiter.join(("fold",) + SCORE_NAMES)]
    for name, s in rows:
        lines.append(delimiter.join([name] + [repr(float(v)) for v in s.as_tuple()]))
    if rows:
        mean = np.mean([s.as_tuple() for _, s in rows], axis=0)
        lines.append(delimiter.join(["mean"] + [repr(float(v)) for v in mean]))
    return "\n".join(lines) + "\n"
