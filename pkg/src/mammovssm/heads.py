"""Quad classification heads and the masked, class-weighted multi-task loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data.study import MISSING
from .errors import ConfigurationError, DataError
from .tensor import Linear, Module, Tensor, ops

TASK_MODES = ("label", "birads", "multi")
HEAD_NAMES = ("label_l", "label_r", "birads_l", "birads_r")


def check_task(task: str) -> str:
    if task not in TASK_MODES:
        raise ConfigurationError(f"unknown task mode {task!r}; expected one of {TASK_MODES}")
    return task


def active_tasks(task: str) -> tuple[str, ...]:
    check_task(task)
    return ("label", "birads") if task == "multi" else (task,)


class BiradsIndex:
    """Contiguous re-indexing of an active BI-RADS grade set, e.g. (1, 3, 5) -> (0, 1, 2)."""

    def __init__(self, grades: Sequence[int]):
        self.grades = tuple(sorted(int(g) for g in grades))
        if len(self.grades) < 2 or len(set(self.grades)) != len(self.grades):
            raise ConfigurationError(f"BI-RADS set needs at least two distinct grades, got {grades}")
        self._index = {g: i for i, g in enumerate(self.grades)}

    def __len__(self) -> int:
        return len(self.grades)

    def to_index(self, grade: int) -> int:
        if grade == MISSING:
            return MISSING
        if grade not in self._index:
            raise DataError(f"BI-RADS grade {grade} not in active set {self.grades}")
        return self._index[grade]

    def to_grade(self, index: int) -> int:
        return MISSING if index == MISSING else self.grades[index]


class QuadHeads(Module):
    """Four independent affine heads on the shared fused vector."""

    def __init__(self, fused_dim: int, num_birads: int, rng: np.random.Generator, task: str = "multi",
                 dtype=np.float32):
        self.task = check_task(task)
        self.fused_dim = fused_dim
        self.num_birads = num_birads
        self.label_l = Linear(fused_dim, 2, rng, dtype=dtype)
        self.label_r = Linear(fused_dim, 2, rng, dtype=dtype)
        self.birads_l = Linear(fused_dim, num_birads, rng, dtype=dtype)
        self.birads_r = Linear(fused_dim, num_birads, rng, dtype=dtype)

    def forward(self, fused: Tensor) -> dict[str, Tensor]:
        out = {}
        for t in active_tasks(self.task):
            out[f"{t}_l"] = getattr(self, f"{t}_l")(fused)
            out[f"{t}_r"] = getattr(self, f"{t}_r")(fused)
        return out


@dataclass
class ClassWeights:
    label: np.ndarray
    birads: np.ndarray

    def for_task(self, task: str) -> np.ndarray:
        return self.label if task == "label" else self.birads


def compute_class_weights(labels: Sequence[int] | np.ndarray, num_classes: int) -> np.ndarray:
    """Mean-normalized inverse frequency ``T / (K * count_c)`` over valid (non -1) labels."""
    y = np.asarray(labels, dtype=np.int64).ravel()
    y = y[y != MISSING]
    counts = np.bincount(y, minlength=num_classes)[:num_classes] if y.size else np.zeros(num_classes, int)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise DataError(f"label outside 0..{num_classes - 1} in training labels")
    for c, n in enumerate(counts):
        if n == 0:
            raise ConfigurationError(f"class {c} never appears in the training labels")
    return y.size / (num_classes * counts.astype(np.float64))


def _onehot(y: np.ndarray, k: int, dtype) -> np.ndarray:
    oh = np.zeros((len(y), k), dtype=dtype)
    valid = y != MISSING
    oh[np.nonzero(valid)[0], y[valid]] = 1.0
    return oh


def task_loss(logits_l: Tensor, logits_r: Tensor, y_l, y_r, weights: Optional[np.ndarray] = None) -> Tensor:
    """Class-weighted cross-entropy, averaged over valid sides per study, then over studies.

    Logits are (B, K); labels are class indices with -1 marking a masked side.
    A masked side contributes exactly zero value and zero gradient.
    """
    y_l = np.atleast_1d(np.asarray(y_l, dtype=np.int64))
    y_r = np.atleast_1d(np.asarray(y_r, dtype=np.int64))
    if logits_l.ndim == 1:
        logits_l, logits_r = logits_l.reshape(1, -1), logits_r.reshape(1, -1)
    k = logits_l.shape[-1]
    for y in (y_l, y_r):
        bad = (y != MISSING) & ((y < 0) | (y >= k))
        if np.any(bad):
            raise DataError(f"label {int(y[bad][0])} outside active classes 0..{k - 1}")
    w = np.ones(k) if weights is None else np.asarray(weights, dtype=np.float64)
    dtype = logits_l.dtype
    per_side = []
    for logits, y in ((logits_l, y_l), (logits_r, y_r)):
        oh = _onehot(y, k, dtype)
        side_w = np.where(y != MISSING, w[np.clip(y, 0, k - 1)], 0.0).astype(dtype)
        ce = -(ops.log_softmax(logits, axis=-1) * Tensor(oh)).sum(axis=-1)
        per_side.append(ce * Tensor(side_w))
    n_valid = (y_l != MISSING).astype(int) + (y_r != MISSING).astype(int)
    inv = np.where(n_valid > 0, 1.0 / np.maximum(n_valid, 1), 0.0).astype(dtype)
    per_study = (per_side[0] + per_side[1]) * Tensor(inv)
    return per_study.mean()


def total_loss(loss_label: Optional[Tensor], loss_birads: Optional[Tensor], task: str = "multi") -> Tensor:
    check_task(task)
    if task == "label":
        return loss_label
    if task == "birads":
        return loss_birads
    return loss_label * 0.5 + loss_birads * 0.5


def model_loss(logits: dict[str, Tensor], targets: dict[str, np.ndarray], task: str,
               weights: Optional[ClassWeights] = None) -> Tensor:
    """Total loss from head outputs; ``targets`` maps head names to index arrays."""
    parts = {}
    for t in active_tasks(task):
        w = None if weights is None else weights.for_task(t)
        parts[t] = task_loss(logits[f"{t}_l"], logits[f"{t}_r"], targets[f"{t}_l"], targets[f"{t}_r"], w)
    return total_loss(parts.get("label"), parts.get("birads"), task)
