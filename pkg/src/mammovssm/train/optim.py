"""AdamW with decoupled weight decay, and global-norm gradient clipping."""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from ..tensor import Parameter


class OptimizerError(FloatingPointError):
    pass


class AdamW:
    """Adam moments with bias correction; decay acts on the weights, not the moments.

    Per step with gradient g on parameter p (p0 is the pre-step value):
    ``p = p0 - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p0)``.
    Parameters whose gradient is ``None`` are skipped entirely.
    """

    def __init__(self, named_params: Iterable[tuple[str, Parameter]], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.05):
        self.params = list(named_params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self) -> None:
        for name, p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise OptimizerError(f"non-finite gradient in parameter {name}")
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            m = self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            v = self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps) + self.weight_decay * p.data
            p.data = (p.data - self.lr * update).astype(p.dtype, copy=False)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


def global_norm(grads: Sequence[np.ndarray | None]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads if g is not None))


def clip_gradients(grads: Sequence[np.ndarray | None], max_norm: float = 1.0) -> list[np.ndarray | None]:
    """Scale every gradient by ``max_norm / norm`` when the global L2 norm exceeds ``max_norm``."""
    norm = global_norm(grads)
    if norm <= max_norm:
        return list(grads)
    scale = max_norm / norm
    return [None if g is None else (g * scale).astype(g.dtype, copy=False) for g in grads]


def clip_parameter_gradients(params: Sequence[Parameter], max_norm: float = 1.0) -> float:
    """In-place variant on ``.grad``; returns the pre-clip norm."""
    grads = [p.grad for p in params]
    norm = global_norm(grads)
    for p, g in zip(params, clip_gradients(grads, max_norm)):
        p.grad = g
    return norm
