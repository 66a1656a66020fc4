"""Training configuration and the flat ``key = value`` config-file format.

Lines are ``key = value``; ``#`` starts a comment; blank lines are ignored.
Keys are ``TrainConfig`` field names. Tuples are written comma-separated.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from ..backbone import BackboneConfig
from ..data.study import BIRADS_SETS
from ..errors import ConfigurationError
from ..heads import check_task
from ..model import ModelConfig

DEFAULT_LR = {"cnn": 1e-4, "hybrid": 1e-4, "vssm": 1e-5}


@dataclass
class TrainConfig:
    # optimisation
    lr: Optional[float] = None  # None -> per-backbone default
    weight_decay: float = 0.05
    clip_norm: float = 1.0
    dropout: float = 0.5
    plateau_factor: float = 0.5
    patience: int = 10
    max_epochs: int = 100
    batch_size: int = 8
    seed: int = 0
    augment: bool = True
    class_weighting: bool = True
    target_auc: Optional[float] = None  # stop once every active task reaches it
    # model
    task: str = "multi"
    backbone: str = "hybrid"
    binding: str = "shared"
    birads_set: str = "15"
    image_size: int = 64
    stem_channels: int = 16
    mid_channels: int = 32
    channels: int = 64
    feature_dim: int = 128
    blocks: Optional[int] = None
    state_size: int = 8
    per_path_params: bool = False
    # data
    n_studies: int = 400
    val_fraction: float = 0.2
    missing_side_prob: float = 0.1
    data_seed: Optional[int] = None  # None -> seed

    def __post_init__(self):
        check_task(self.task)
        if self.birads_set not in BIRADS_SETS:
            raise ConfigurationError(f"unknown BI-RADS set {self.birads_set!r}; expected one of {list(BIRADS_SETS)}")
        if self.lr is None:
            self.lr = DEFAULT_LR.get(self.backbone, 1e-4)
        if self.lr < 0:
            raise ConfigurationError(f"learning rate must be nonnegative, got {self.lr}")
        if self.patience < 1 or not 0 < self.plateau_factor < 1:
            raise ConfigurationError("patience must be >= 1 and plateau factor in (0, 1)")
        if self.batch_size < 1:
            raise ConfigurationError("batch size must be >= 1")
        if self.data_seed is None:
            self.data_seed = self.seed

    @property
    def birads_classes(self) -> tuple[int, ...]:
        return BIRADS_SETS[self.birads_set]

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(variant=self.backbone, image_size=self.image_size, stem_channels=self.stem_channels,
                              mid_channels=self.mid_channels, channels=self.channels,
                              feature_dim=self.feature_dim, blocks=self.blocks, state_size=self.state_size,
                              per_path_params=self.per_path_params)

    def model_config(self) -> ModelConfig:
        return ModelConfig(backbone=self.backbone_config(), binding=self.binding, task=self.task,
                           birads_classes=self.birads_classes, dropout=self.dropout)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _field_types() -> dict[str, str]:
    return {f.name: str(f.type) for f in fields(TrainConfig)}


def coerce(key: str, value: str):
    types = _field_types()
    if key not in types:
        raise ConfigurationError(f"unknown config key {key!r}")
    t = types[key]
    text = value.strip()
    if text.lower() in ("none", "") and t.startswith("Optional"):
        return None
    try:
        if "bool" in t:
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if "int" in t:
            return int(text)
        if "float" in t:
            return float(text)
    except ValueError:
        raise ConfigurationError(f"config key {key}: cannot parse {value!r} as {t}") from None
    return text


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = coerce(key, value)
    return out


def load_config(path: Path | str | None = None, **overrides) -> TrainConfig:
    """File values first, then non-None ``overrides`` on top."""
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        lines.append(f"{k} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"
