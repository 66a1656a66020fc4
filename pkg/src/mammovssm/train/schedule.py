"""Reduce-on-plateau learning-rate schedule for a maximized metric."""

from __future__ import annotations

from typing import Iterable, Optional


class PlateauSchedule:
    """Halve (by ``factor``) after ``patience`` epochs without strict improvement.

    The wait counter resets on every improvement and after every reduction.
    An undefined metric (``None``) counts as no improvement.
    """

    def __init__(self, lr: float, factor: float = 0.5, patience: int = 10):
        if lr < 0 or not 0 < factor < 1 or patience < 1:
            raise ValueError(f"invalid schedule: lr={lr}, factor={factor}, patience={patience}")
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.best: Optional[float] = None
        self.wait = 0
        self.epoch = 0

    def step(self, metric: Optional[float]) -> bool:
        """Record one epoch's metric; returns True when the rate was reduced."""
        self.epoch += 1
        if metric is not None and (self.best is None or metric > self.best):
            self.best = metric
            self.wait = 0
            return False
        self.wait += 1
        if self.wait >= self.patience:
            self.lr *= self.factor
            self.wait = 0
            return True
        return False


def reduction_epochs(history: Iterable[Optional[float]], patience: int = 10) -> list[int]:
    """1-based epochs at which a reduction fires for a metric history."""
    sched = PlateauSchedule(1.0, patience=patience)
    return [i + 1 for i, m in enumerate(history) if sched.step(m)]
