"""Confusion-matrix metrics: balanced accuracy, Cohen's kappa, weighted F1, accuracy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyDataset


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def balanced_accuracy(cm) -> float:
    cm = np.asarray(cm, dtype=np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    present = (support > 0) | (predicted > 0)
    recall = np.divide(np.diag(cm), support, out=np.zeros_like(support), where=support > 0)
    return float(recall[present].mean())


def cohen_kappa(cm) -> float:
    cm = np.asarray(cm, dtype=np.float64)
    n = cm.sum()
    p_o = np.trace(cm) / n
    p_e = float((cm.sum(axis=0) * cm.sum(axis=1)).sum() / n ** 2)
    if p_e >= 1.0:
        return 1.0 if p_o >= 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def weighted_f1(cm) -> float:
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    support = cm.sum(axis=1)
    denom = support + cm.sum(axis=0)  # 2TP + FP + FN
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float((f1 * support).sum() / support.sum())


def accuracy(cm) -> float:
    cm = np.asarray(cm, dtype=np.float64)
    return float(np.trace(cm) / cm.sum())


@dataclass
class MetricsReport:
    bacc: float
    ckap: float
    wf1: float
    acc: float
    confusion: np.ndarray

    @property
    def n_samples(self) -> int:
        return int(self.confusion.sum())

    @classmethod
    def from_confusion(cls, cm) -> "MetricsReport":
        cm = np.asarray(cm, dtype=np.int64)
        if cm.sum() == 0:
            raise EmptyDataset("confusion matrix is empty")
        return cls(balanced_accuracy(cm), cohen_kappa(cm), weighted_f1(cm), accuracy(cm), cm)

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes) -> "MetricsReport":
        if len(y_true) == 0:
            raise EmptyDataset("no samples to evaluate")
        return cls.from_confusion(confusion_matrix(y_true, y_pred, n_classes))

    def to_dict(self) -> dict:
        return {
            "bacc": self.bacc, "ckap": self.ckap, "wf1": self.wf1, "acc": self.acc,
            "confusion": self.confusion.tolist(), "n_samples": self.n_samples,
        }
