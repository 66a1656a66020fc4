"""Per-view feature extractors.

Three variants share one interface (``encode``: B×3×S×S -> B×D):

* ``cnn``    - convolutional encoder plus residual stages, no state-space layers
* ``vssm``   - 4×4 patch embedding followed by hybrid conv/SS2D blocks
* ``hybrid`` - convolutional encoder (S -> S/8) cascaded into hybrid blocks
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .ss2d import PATHS, ss2d_forward
from .ssm import SelectiveScan
from .tensor import Conv2d, InstanceNorm2d, LayerNorm, Linear, Module, Tensor, no_grad, ops

VARIANTS = ("cnn", "vssm", "hybrid")
DEFAULT_BLOCKS = {"cnn": 2, "vssm": 4, "hybrid": 2}


@dataclass
class BackboneConfig:
    variant: str = "hybrid"
    image_size: int = 64
    stem_channels: int = 16
    mid_channels: int = 32
    channels: int = 64  # width of the block stage
    feature_dim: int = 128
    blocks: int | None = None  # None -> DEFAULT_BLOCKS[variant]
    state_size: int = 8
    split_ratio: float = 0.5
    per_path_params: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown backbone variant {self.variant!r}; expected one of {VARIANTS}")
        if self.image_size % 8:
            raise ConfigurationError(f"image size {self.image_size} is not divisible by 8")
        if self.blocks is None:
            self.blocks = DEFAULT_BLOCKS[self.variant]
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigurationError(f"split ratio must be in (0, 1), got {self.split_ratio}")


class ResidualBlock(Module):
    """conv-norm-relu-conv-norm plus a projected shortcut when shape changes."""

    def __init__(self, c_in: int, c_out: int, stride: int, rng, dtype=np.float32):
        self.conv1 = Conv2d(c_in, c_out, 3, rng, stride=stride, padding=1, dtype=dtype)
        self.norm1 = InstanceNorm2d(c_out, dtype=dtype)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, padding=1, dtype=dtype)
        self.norm2 = InstanceNorm2d(c_out, dtype=dtype)
        if stride != 1 or c_in != c_out:
            self.proj = Conv2d(c_in, c_out, 1, rng, stride=stride, dtype=dtype)
            self.proj_norm = InstanceNorm2d(c_out, dtype=dtype)
        else:
            self.proj = None

    def forward(self, x: Tensor) -> Tensor:
        h = ops.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        skip = x if self.proj is None else self.proj_norm(self.proj(x))
        return ops.relu(h + skip)


class ConvEncoder(Module):
    """Stem (stride 2) and two residual stages (stride 2 each): S -> S/8."""

    def __init__(self, stem: int, mid: int, out: int, rng, dtype=np.float32):
        self.stem = Conv2d(3, stem, 3, rng, stride=2, padding=1, dtype=dtype)
        self.stem_norm = InstanceNorm2d(stem, dtype=dtype)
        self.stage1 = ResidualBlock(stem, mid, 2, rng, dtype)
        self.stage2 = ResidualBlock(mid, out, 2, rng, dtype)
        self.out_channels = out

    def forward(self, x: Tensor) -> Tensor:
        x = ops.relu(self.stem_norm(self.stem(x)))
        return self.stage2(self.stage1(x))


class VSSBranch(Module):
    """LayerNorm -> gated SS2D -> residual, on channel-last tokens (B, H, W, c)."""

    def __init__(self, c: int, state: int, rng, per_path: bool = False, dtype=np.float32):
        self.norm = LayerNorm(c, dtype=dtype)
        self.in_proj = Linear(c, 2 * c, rng, bias=False, dtype=dtype)
        if per_path:
            self.scans = [SelectiveScan(c, state, rng, dtype=dtype) for _ in PATHS]
        else:
            self.scan = SelectiveScan(c, state, rng, dtype=dtype)
        self.out_norm = LayerNorm(c, dtype=dtype)
        self.out_proj = Linear(c, c, rng, bias=False, dtype=dtype)
        self.c = c

    def forward(self, x: Tensor) -> Tensor:
        c = self.c
        xz = self.in_proj(self.norm(x))
        u, gate = xz[..., :c], xz[..., c:]
        y = ss2d_forward(u, self.scans if hasattr(self, "scans") else self.scan)
        y = self.out_norm(y) * ops.silu(gate)
        return x + self.out_proj(y)


class HybridBlock(Module):
    """Channel split: one part through two 3×3 convs, the rest through a VSS branch.

    The two outputs are concatenated and interleaved (two-group channel shuffle)
    so that stacked blocks route every channel through both branch types.
    """

    def __init__(self, channels: int, state: int, rng, split_ratio: float = 0.5,
                 per_path: bool = False, dtype=np.float32):
        self.channels = channels
        self.c_conv = int(round(channels * split_ratio))
        self.c_ssm = channels - self.c_conv
        if self.c_conv < 1 or self.c_ssm < 1:
            raise ConfigurationError(f"split {split_ratio} of {channels} channels leaves an empty branch")
        cc = self.c_conv
        self.conv1 = Conv2d(cc, cc, 3, rng, padding=1, dtype=dtype)
        self.norm1 = InstanceNorm2d(cc, dtype=dtype)
        self.conv2 = Conv2d(cc, cc, 3, rng, padding=1, dtype=dtype)
        self.norm2 = InstanceNorm2d(cc, dtype=dtype)
        self.ssm = VSSBranch(self.c_ssm, state, rng, per_path=per_path, dtype=dtype)
        self._shuffle = channel_shuffle_order(channels, self.c_conv)

    def split(self, x: Tensor) -> tuple[Tensor, Tensor]:
        return x[:, :self.c_conv], x[:, self.c_conv:]

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ConfigurationError(f"block expects {self.channels} channels, got {x.shape[1]}")
        xc, xs = self.split(x)
        yc = ops.relu(self.norm1(self.conv1(xc)))
        yc = ops.relu(self.norm2(self.conv2(yc)))
        ys = self.ssm(xs.transpose(0, 2, 3, 1)).transpose(0, 3, 1, 2)
        y = ops.concat([yc, ys], axis=1)
        return ops.take(y, self._shuffle, axis=1)


def channel_shuffle_order(channels: int, first: int) -> np.ndarray:
    """Interleave the first ``first`` channels with the remainder."""
    a = list(range(first))
    b = list(range(first, channels))
    out = []
    for i in range(max(len(a), len(b))):
        if i < len(a):
            out.append(a[i])
        if i < len(b):
            out.append(b[i])
    return np.array(out)


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        C = cfg.channels
        if cfg.variant == "vssm":
            self.embed = Conv2d(3, C, 4, rng, stride=4, bias=True, dtype=dtype)
            self.embed_norm = LayerNorm(C, dtype=dtype)
            self.encoder = None
        else:
            self.encoder = ConvEncoder(cfg.stem_channels, cfg.mid_channels, C, rng, dtype)
        if cfg.variant == "cnn":
            self.blocks = [ResidualBlock(C, C, 1, rng, dtype) for _ in range(cfg.blocks)]
        else:
            self.blocks = [HybridBlock(C, cfg.state_size, rng, cfg.split_ratio, cfg.per_path_params, dtype)
                           for _ in range(cfg.blocks)]
        self.head = Linear(C, cfg.feature_dim, rng, dtype=dtype)

    @property
    def feature_dim(self) -> int:
        return self.cfg.feature_dim

    def feature_map(self, x: Tensor) -> Tensor:
        if self.encoder is None:
            x = self.embed(x)
            x = self.embed_norm(x.transpose(0, 2, 3, 1)).transpose(0, 3, 1, 2)
        else:
            x = self.encoder(x)
        for block in self.blocks:
            x = block(x)
        return x

    def forward(self, images: Tensor) -> Tensor:
        """(B, 3, S, S) -> (B, D)."""
        if images.ndim != 4 or images.shape[1] != 3:
            raise ConfigurationError(f"expected B×3×S×S images, got {images.shape}")
        if images.shape[2] % 8 or images.shape[3] % 8:
            raise ConfigurationError(f"image size {images.shape[2:]} is not divisible by 8")
        return self.head(ops.global_avg_pool(self.feature_map(images)))


def encode_view(img, backbone: Backbone) -> np.ndarray:
    """Feature vector of one 3×S×S image (or a 1×S×S grayscale, replicated)."""
    arr = np.asarray(img.data if isinstance(img, Tensor) else img, dtype=backbone.dtype)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.shape[0] == 1:
        arr = np.repeat(arr, 3, axis=0)
    was_training = backbone.training
    backbone.eval()
    try:
        with no_grad():
            return backbone(Tensor(arr[None])).data[0]
    finally:
        backbone.train(was_training)


# view order used everywhere: L-CC, L-MLO, R-CC, R-MLO
VIEW_NAMES = ("lcc", "lmlo", "rcc", "rmlo")
CC_VIEWS = (0, 2)
MLO_VIEWS = (1, 3)


class ViewEncoders(Module):
    """Maps a (B, 4, 3, S, S) study batch to (B, 4, D) view features."""

    def __init__(self, mode: str, shared: Backbone | None = None, cc: Backbone | None = None,
                 mlo: Backbone | None = None):
        self.mode = mode
        self.shared = shared
        self.cc = cc
        self.mlo = mlo

    @property
    def feature_dim(self) -> int:
        return (self.shared or self.cc).feature_dim

    def backbone_for(self, view: int) -> Backbone:
        if self.mode == "shared":
            return self.shared
        return self.cc if view in CC_VIEWS else self.mlo

    def forward(self, views: Tensor) -> Tensor:
        B, V = views.shape[:2]
        if V != 4:
            raise ConfigurationError(f"expected 4 views, got {V}")
        rest = views.shape[2:]
        if self.mode == "shared":
            feats = self.shared(views.reshape(B * 4, *rest))
            return feats.reshape(B, 4, -1)
        cc = self.cc(ops.take(views, np.array(CC_VIEWS), axis=1).reshape(B * 2, *rest)).reshape(B, 2, -1)
        mlo = self.mlo(ops.take(views, np.array(MLO_VIEWS), axis=1).reshape(B * 2, *rest)).reshape(B, 2, -1)
        # (cc0, mlo0, cc1, mlo1) is exactly L-CC, L-MLO, R-CC, R-MLO
        return ops.stack([cc[:, 0], mlo[:, 0], cc[:, 1], mlo[:, 1]], axis=1)


def bind_views(cfg: BackboneConfig, mode: str, rng: np.random.Generator, dtype=np.float32) -> ViewEncoders:
    """``shared``: one backbone for all views; ``view-specific``: one for CC, one for MLO."""
    if mode == "shared":
        return ViewEncoders("shared", shared=Backbone(cfg, rng, dtype))
    if mode == "view-specific":
        return ViewEncoders("view-specific", cc=Backbone(cfg, rng, dtype), mlo=Backbone(cfg, rng, dtype))
    raise ConfigurationError(f"unknown binding mode {mode!r}")
