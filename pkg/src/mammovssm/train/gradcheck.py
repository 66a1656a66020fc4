"""Finite-difference verification of analytic parameter gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from ..backbone import BackboneConfig
from ..data.synthetic import SyntheticSpec, generate_synthetic
from ..data.transforms import preprocess
from ..fusion import GatedFusion
from ..heads import BiradsIndex, QuadHeads, model_loss
from ..model import ModelConfig, MultiViewModel
from ..tensor import Module, Parameter, Tensor, no_grad

FUSION_HEAD = "fusion-head"


@dataclass
class GradcheckFailure:
    parameter: str
    coordinate: tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float

    def __str__(self) -> str:
        return (f"{self.parameter}{list(self.coordinate)}: analytic {self.analytic:.6e} "
                f"numeric {self.numeric:.6e} rel {self.rel_error:.3e}")


@dataclass
class GradcheckReport:
    tolerance: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    failures: list[GradcheckFailure] = field(default_factory=list)
    coordinates_checked: int = 0

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        worst = max(self.max_rel_error.values(), default=0.0)
        head = (f"gradcheck {'PASS' if self.passed else 'FAIL'}: {len(self.max_rel_error)} tensors, "
                f"{self.coordinates_checked} coordinates, worst rel error {worst:.3e} (tol {self.tolerance:g})")
        return "\n".join([head] + [f"  {f}" for f in self.failures[:20]])


def rel_error(a: float, b: float, floor: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradients(named_params: Sequence[tuple[str, Parameter]], loss_fn: Callable[[], Tensor],
                    tolerance: float, coords: int = 20, step: float = 1e-5, seed: int = 0,
                    floor: float = 1e-6) -> GradcheckReport:
    """Central differences at up to ``coords`` random coordinates of every parameter tensor.

    ``floor`` bounds the relative-error denominator so gradients that are
    zero up to rounding compare on an absolute scale.
    """
    for _, p in named_params:
        p.grad = None
    loss_fn().backward()
    rng = np.random.default_rng(seed)
    report = GradcheckReport(tolerance)
    for name, p in named_params:
        grad = np.zeros_like(p.data) if p.grad is None else p.grad
        picks = rng.choice(p.size, size=min(coords, p.size), replace=False)
        worst = 0.0
        for flat in picks:
            idx = np.unravel_index(flat, p.shape)
            old = p.data[idx]
            with no_grad():
                p.data[idx] = old + step
                fp = loss_fn().item()
                p.data[idx] = old - step
                fm = loss_fn().item()
            p.data[idx] = old
            numeric = (fp - fm) / (2 * step)
            err = rel_error(float(grad[idx]), numeric, floor)
            worst = max(worst, err)
            report.coordinates_checked += 1
            if err > tolerance:
                report.failures.append(GradcheckFailure(name, tuple(int(i) for i in idx), float(grad[idx]),
                                                        numeric, err))
        report.max_rel_error[name] = worst
    return report


def tiny_hybrid_config(image_size: int = 16, channels: int = 8, feature_dim: int = 16) -> ModelConfig:
    bb = BackboneConfig(variant="hybrid", image_size=image_size, stem_channels=4, mid_channels=8,
                        channels=channels, feature_dim=feature_dim, blocks=1, state_size=4)
    return ModelConfig(backbone=bb, task="multi", birads_classes=(1, 5))


def _batch(cfg: ModelConfig, n: int, seed: int):
    spec = SyntheticSpec(image_size=cfg.backbone.image_size, birads_classes=cfg.birads_classes,
                         missing_side_prob=0.5, seed=seed)
    studies = generate_synthetic(spec, n)
    x = np.stack([preprocess(s, cfg.backbone.image_size) for s in studies]).astype(np.float64)
    idx = BiradsIndex(cfg.birads_classes)
    targets = {
        "label_l": np.array([s.labels.label_l for s in studies]),
        "label_r": np.array([s.labels.label_r for s in studies]),
        "birads_l": np.array([idx.to_index(s.labels.birads_l) for s in studies]),
        "birads_r": np.array([idx.to_index(s.labels.birads_r) for s in studies]),
    }
    return x, targets


class _FusionHeadModel(Module):
    def __init__(self, feature_dim: int, num_birads: int, rng):
        self.fusion = GatedFusion(feature_dim, rng, dtype=np.float64)
        self.heads = QuadHeads(4 * feature_dim, num_birads, rng, dtype=np.float64)

    def forward(self, feats: Tensor):
        return self.heads(self.fusion(feats).fused)


def gradcheck(model_config: Union[ModelConfig, str], tolerance: float, coords: int = 20, seed: int = 0,
              batch: int = 2, step: float = 1e-5) -> GradcheckReport:
    """Gradient check of the total loss in double precision on one synthetic batch.

    ``model_config`` is a ``ModelConfig`` for the full network, or ``"fusion-head"``
    for the fusion module plus classification heads on random view features.
    """
    rng = np.random.default_rng(seed)
    if model_config == FUSION_HEAD:
        cfg = ModelConfig(birads_classes=(1, 3, 5))
        model = _FusionHeadModel(4, 3, rng).eval()
        inputs = Tensor(rng.standard_normal((batch, 4, 4)))
        _, targets = _batch(tiny_hybrid_config(image_size=8), batch, seed)
        targets["birads_l"] = np.where(targets["birads_l"] >= 0, rng.integers(0, 3, batch), -1)
        targets["birads_r"] = np.where(targets["birads_r"] >= 0, rng.integers(0, 3, batch), -1)

        def loss_fn():
            return model_loss(model(inputs), targets, cfg.task)
    else:
        cfg = model_config
        model = MultiViewModel(cfg, rng, dtype=np.float64).eval()
        x, targets = _batch(cfg, batch, seed)
        inputs = Tensor(x)

        def loss_fn():
            return model_loss(model(inputs).logits, targets, cfg.task)

    return check_gradients(list(model.named_parameters()), loss_fn, tolerance, coords=coords, step=step,
                           seed=seed)
