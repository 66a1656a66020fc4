"""Ranking and classification metrics."""

from __future__ import annotations

import warnings
from typing import Optional

import numpy as np


def binary_auc(scores, labels) -> Optional[float]:
    """Mann-Whitney AUC with ties counted half; ``None`` when a class is missing."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    pos, neg = s[y], np.sort(s[~y])
    if pos.size == 0 or neg.size == 0:
        return None
    below = np.searchsorted(neg, pos, side="left")
    not_above = np.searchsorted(neg, pos, side="right")
    twice_wins = int(np.sum(below, dtype=np.int64)) * 2 + int(np.sum(not_above - below, dtype=np.int64))
    return twice_wins / (2 * pos.size * neg.size)


def auc(scores, labels) -> Optional[float]:
    """Binary AUC for 1-D scores; one-vs-rest macro AUC for (n, K) score matrices.

    The macro average runs over classes that have both positives and negatives.
    Returns ``None`` when no class yields a defined AUC.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).ravel()
    if scores.ndim == 1:
        return binary_auc(scores, labels)
    if scores.ndim == 2 and scores.shape[1] == 2:
        return binary_auc(scores[:, 1], labels == 1)
    per_class = [binary_auc(scores[:, c], labels == c) for c in range(scores.shape[1])]
    defined = [a for a in per_class if a is not None]
    return float(np.mean(defined)) if defined else None


def predict(scores) -> np.ndarray:
    """Argmax with lowest-index tie-break."""
    return np.argmax(np.asarray(scores), axis=-1)


def confusion(preds, labels, k: int) -> np.ndarray:
    m = np.zeros((k, k), dtype=np.int64)
    np.add.at(m, (np.asarray(labels, dtype=np.int64), np.asarray(preds, dtype=np.int64)), 1)
    return m


def macro_f1(preds, labels, k: int) -> float:
    """Unweighted mean of per-class F1 = 2TP / (2TP + FP + FN) over ``k`` classes.

    A class absent from both predictions and labels scores 0 and triggers a warning.
    """
    cm = confusion(preds, labels, k)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    empty = np.nonzero(denom == 0)[0]
    if empty.size:
        warnings.warn(f"classes {empty.tolist()} absent from predictions and labels; F1 set to 0",
                      RuntimeWarning, stacklevel=2)
    f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    return float(f1.mean())
