"""Confusion-matrix metrics, reported as percentages."""
from fractions import Fraction

import numpy as np


def confusion(reference, predicted, n_classes):
    """``K x K`` counts; rows are reference classes, columns predictions."""
    reference = np.asarray(reference, dtype=np.int64).reshape(-1)
    predicted = np.asarray(predicted, dtype=np.int64).reshape(-1)
    if reference.shape != predicted.shape:
        raise ValueError("reference and predicted lengths differ")
    for arr in (reference, predicted):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"label out of range [0, {n_classes})")
    flat = reference * n_classes + predicted
    return np.bincount(flat, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def _check(cm):
    cm = np.asarray(cm)
    if cm.dtype.kind not in "iu":
        if not np.all(cm == np.round(cm)):
            raise ValueError("confusion matrix must hold counts")
        cm = cm.astype(np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError("confusion matrix must be square")
    if cm.size and cm.min() < 0:
        raise ValueError("confusion matrix counts must be non-negative")
    if cm.sum() <= 0:
        raise ValueError("confusion matrix is empty")
    return cm


def _f1_fractions(cm):
    # 2tp / (2tp + fp + fn) equals 2PR / (P + R); 0 when the class is absent from both sides
    out = []
    for k in range(cm.shape[0]):
        tp = int(cm[k, k])
        denom = 2 * tp + int(cm[:, k].sum()) - tp + int(cm[k, :].sum()) - tp
        out.append(Fraction(200 * tp, denom) if denom else Fraction(0))
    return out


def per_class_f1(cm):
    """F1 per class in percent; undefined precision or recall counts as 0.

    Computed in exact rational arithmetic and rounded once to float.
    """
    return np.array([float(f) for f in _f1_fractions(_check(cm))])


def weighted_f1(cm):
    """Support-weighted mean of per-class F1, in percent."""
    cm = _check(cm)
    support = cm.sum(axis=1)
    total = sum(int(s) * f for s, f in zip(support, _f1_fractions(cm)))
    return float(total / int(support.sum()))


def accuracy(cm):
    cm = _check(cm)
    return float(Fraction(100 * int(np.trace(cm)), int(cm.sum())))


def evaluate(reference, predicted, n_classes):
    cm = confusion(reference, predicted, n_classes)
    return {
        "accuracy": accuracy(cm),
        "weighted_f1": weighted_f1(cm),
        "per_class_f1": per_class_f1(cm).tolist(),
        "confusion": cm.tolist(),
    }
