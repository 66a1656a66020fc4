"""Gated attention fusion of the four per-view feature vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data.study import apply_missing_mask
from .tensor import Dropout, Linear, Module, Tensor, ops
from .tensor.core import DimensionError

N_VIEWS = 4

__all__ = ["FusionOutput", "GatedFusion", "apply_missing_mask", "fuse"]


@dataclass
class FusionOutput:
    alpha: Tensor  # (B, 4) in L-CC, L-MLO, R-CC, R-MLO order
    fused: Tensor  # (B, 4*D)


class GatedFusion(Module):
    """α = softmax(MLP(concat(v))), fused = concat(α_i v_i).

    Dropout acts on the concatenated context before the MLP and is active only
    in training mode.
    """

    def __init__(self, feature_dim: int, rng: np.random.Generator, hidden: int | None = None,
                 dropout: float = 0.5, dtype=np.float32, seed: int = 0):
        hidden = hidden or feature_dim
        self.feature_dim = feature_dim
        self.fc1 = Linear(N_VIEWS * feature_dim, hidden, rng, dtype=dtype, gain=2 ** 0.5)
        self.fc2 = Linear(hidden, N_VIEWS, rng, dtype=dtype)
        self.dropout = Dropout(dropout, seed=seed)

    def forward(self, views: Tensor) -> FusionOutput:
        """``views``: (B, 4, D)."""
        if views.ndim != 3 or views.shape[1] != N_VIEWS or views.shape[2] != self.feature_dim:
            raise DimensionError(f"fusion expects (B, 4, {self.feature_dim}) features, got {views.shape}")
        B, _, D = views.shape
        context = self.dropout(views.reshape(B, N_VIEWS * D))
        logits = self.fc2(ops.relu(self.fc1(context)))
        alpha = ops.softmax(logits, axis=-1)
        fused = (views * alpha.reshape(B, N_VIEWS, 1)).reshape(B, N_VIEWS * D)
        return FusionOutput(alpha=alpha, fused=fused)


def fuse(v_lcc, v_lmlo, v_rcc, v_rmlo, params: GatedFusion) -> FusionOutput:
    """Fuse one study's four D-vectors (arrays or tensors)."""
    vs = [v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=params.fc1.weight.dtype))
          for v in (v_lcc, v_lmlo, v_rcc, v_rmlo)]
    lengths = {v.shape for v in vs}
    if len(lengths) != 1 or vs[0].ndim != 1:
        raise DimensionError(f"view vectors must be equal-length 1-D, got {[v.shape for v in vs]}")
    out = params(ops.stack(vs, axis=0).reshape(1, N_VIEWS, -1))
    return FusionOutput(alpha=out.alpha[0], fused=out.fused[0])
