"""Full multi-view classifier: view encoders, gated fusion, quad heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .backbone import BackboneConfig, ViewEncoders, bind_views
from .fusion import GatedFusion
from .heads import QuadHeads, check_task
from .tensor import Module, Tensor


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    binding: str = "shared"
    task: str = "multi"
    birads_classes: Sequence[int] = (1, 5)
    dropout: float = 0.5
    fusion_hidden: int | None = None

    def __post_init__(self):
        check_task(self.task)
        self.birads_classes = tuple(int(g) for g in self.birads_classes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["birads_classes"] = list(self.birads_classes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["backbone"] = BackboneConfig(**d["backbone"])
        return cls(**d)


@dataclass
class ModelOutput:
    alpha: Tensor
    logits: dict[str, Tensor]


class MultiViewModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32, dropout_seed: int = 0):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.encoders: ViewEncoders = bind_views(cfg.backbone, cfg.binding, rng, dtype)
        D = cfg.backbone.feature_dim
        self.fusion = GatedFusion(D, rng, hidden=cfg.fusion_hidden, dropout=cfg.dropout, dtype=dtype,
                                  seed=dropout_seed)
        self.heads = QuadHeads(4 * D, len(cfg.birads_classes), rng, task=cfg.task, dtype=dtype)

    def forward(self, views: Tensor) -> ModelOutput:
        """``views``: (B, 4, 3, S, S) in L-CC, L-MLO, R-CC, R-MLO order."""
        feats = self.encoders(views)
        fused = self.fusion(feats)
        return ModelOutput(alpha=fused.alpha, logits=self.heads(fused.fused))
