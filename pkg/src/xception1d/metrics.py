"""Confusion matrices and per-class precision/recall/F1."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


@dataclass(frozen=True)
class ClassReport:
    index: int
    name: str
    precision: float
    recall: float
    f1: float
    support: int


def per_class_report(cm: np.ndarray, class_names: Sequence[str] | None = None) -> list[ClassReport]:
    """Per-class scores sorted by descending F1 (ties keep class order); 0/0 counts as 0."""
    k = cm.shape[0]
    names = list(class_names) if class_names is not None else [str(i) for i in range(k)]
    reports = []
    for i in range(k):
        tp = int(cm[i, i])
        predicted = int(cm[:, i].sum())
        actual = int(cm[i, :].sum())
        precision = _ratio(tp, predicted)
        recall = _ratio(tp, actual)
        f1 = _ratio(2 * precision * recall, precision + recall)
        reports.append(ClassReport(i, names[i], precision, recall, f1, actual))
    return sorted(reports, key=lambda r: (-r.f1, r.index))


def accuracy(cm: np.ndarray) -> float:
    total = cm.sum()
    return float(np.trace(cm) / total) if total else 0.0


@dataclass
class Evaluation:
    confusion: np.ndarray
    class_names: tuple

    @property
    def accuracy(self) -> float:
        return accuracy(self.confusion)

    @property
    def per_class(self) -> list[ClassReport]:
        return per_class_report(self.confusion, self.class_names)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "class_names": list(self.class_names),
            "per_class": [r.__dict__ for r in self.per_class],
        }


def per_class_table(evaluation: Evaluation) -> str:
    """Tab-separated precision/recall/F1 per class, best F1 first."""
    lines = ["class\tprecision\trecall\tf1\tsupport"]
    for r in evaluation.per_class:
        lines.append(f"{r.name}\t{r.precision:.6f}\t{r.recall:.6f}\t{r.f1:.6f}\t{r.support}")
    return "\n".join(lines) + "\n"


def write_per_class_table(evaluation: Evaluation, path) -> None:
    Path(path).write_text(per_class_table(evaluation))
