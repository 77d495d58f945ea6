"""Classification metrics computed from integer predictions or raw scores."""

from __future__ import annotations

import numpy as np

from .errors import DataError, ShapeError


def _check_pair(y_true, y_other, n_classes=None):
    y_true = np.asarray(y_true)
    y_other = np.asarray(y_other)
    if y_true.ndim != 1 or y_true.shape != y_other.shape:
        raise ShapeError(f"label arrays must be 1-D and equal length, "
                         f"got {y_true.shape} and {y_other.shape}")
    if y_true.shape[0] == 0:
        raise DataError("empty label arrays")
    if n_classes is not None:
        for name, arr in (("y_true", y_true), ("y_pred", y_other)):
            if arr.min() < 0 or arr.max() >= n_classes:
                raise DataError(f"{name} has labels outside [0, {n_classes})")
    return y_true, y_other


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """(K, K) counts, rows index the true class, columns the prediction."""
    y_true, y_pred = _check_pair(y_true, y_pred, n_classes)
    mat = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(mat, (y_true, y_pred), 1)
    return mat


def accuracy(y_true, y_pred) -> float:
    y_true, y_pred = _check_pair(y_true, y_pred)
    return float((y_true == y_pred).mean())


def macro_f1(y_true, y_pred, n_classes: int) -> float:
    """Mean per-class F1 over all K classes.

    A class nobody has and nobody predicts contributes an F1 of 0; the mean
    still divides by K, so shrinking the label set cannot inflate the score.
    """
    mat = confusion_matrix(y_true, y_pred, n_classes)
    tp = np.diag(mat).astype(np.float64)
    pred = mat.sum(axis=0).astype(np.float64)
    support = mat.sum(axis=1).astype(np.float64)
    denom = pred + support
    f1 = np.divide(2.0 * tp, denom, out=np.zeros(n_classes), where=denom > 0)
    return float(f1.mean())


def uar(y_true, y_pred, n_classes: int) -> float:
    """Unweighted average recall over the classes present in y_true."""
    mat = confusion_matrix(y_true, y_pred, n_classes)
    support = mat.sum(axis=1)
    seen = support > 0
    if not seen.any():
        raise DataError("no class has support")
    recall = np.diag(mat)[seen] / support[seen]
    return float(recall.mean())


def auc_binary(y_true, scores) -> float:
    """Area under the ROC curve for binary labels via the rank statistic.

    Tied scores get mid-ranks, which matches trapezoidal integration of the
    empirical curve.
    """
    y_true, scores = _check_pair(y_true, scores)
    if not np.isin(y_true, (0, 1)).all():
        raise DataError("auc_binary needs 0/1 labels")
    n_pos = int(y_true.sum())
    n_neg = y_true.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("auc_binary needs both classes present")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.shape[0])
    ranks[order] = np.arange(1, scores.shape[0] + 1, dtype=np.float64)
    # average ranks within tie groups
    sorted_scores = scores[order]
    lo = 0
    while lo < sorted_scores.shape[0]:
        hi = lo
        while hi + 1 < sorted_scores.shape[0] and sorted_scores[hi + 1] == sorted_scores[lo]:
            hi += 1
        if hi > lo:
            ranks[order[lo:hi + 1]] = 0.5 * (lo + 1 + hi + 1)
        lo = hi + 1
    rank_sum = ranks[y_true == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def summarize(y_true, y_pred, n_classes: int) -> dict:
    """The metric bundle reported per evaluation pass."""
    return {
        "accuracy": accuracy(y_true, y_pred),
        "macro_f1": macro_f1(y_true, y_pred, n_classes),
        "uar": uar(y_true, y_pred, n_classes),
    }
