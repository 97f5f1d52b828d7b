"""Multiclass classification metrics: confusion matrix, per-class F1, weighted F1."""

from __future__ import annotations

import numpy as np

__all__ = ["confusion_matrix", "accuracy_from_confusion", "per_class_f1", "weighted_f1"]


def confusion_matrix(y_true, y_pred, n_classes):
    """(C, C) counts with rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"label arrays differ in shape: {y_true.shape} vs {y_pred.shape}")
    cm = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def accuracy_from_confusion(cm):
    cm = np.asarray(cm)
    total = cm.sum()
    return float(np.trace(cm) / total) if total else 0.0


def per_class_f1(cm):
    """F1 = 2PR / (P + R) per class, 0 where precision + recall is 0."""
    cm = np.asarray(cm, dtype=float)
    tp = np.diag(cm)
    predicted = cm.sum(axis=0)
    support = cm.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    pr = precision + recall
    return np.divide(2 * precision * recall, pr, out=np.zeros_like(tp), where=pr > 0)


def weighted_f1(cm):
    """Support-weighted mean of per-class F1 scores."""
    cm = np.asarray(cm, dtype=float)
    support = cm.sum(axis=1)
    total = support.sum()
    if total == 0:
        return 0.0
    return float(np.sum(support / total * per_class_f1(cm)))
