"""Resizing, orientation, augmentation and model-input assembly."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import affine_transform

from .study import FourViewStudy, apply_missing_mask


def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Rows interpolate with half-pixel alignment; edge samples are clamped."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), hi] += frac
    return m


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Each output pixel averages the input interval it covers (exact overlaps)."""
    edges = np.arange(n_out + 1) * (n_in / n_out)
    m = np.zeros((n_out, n_in))
    for o in range(n_out):
        a, b = edges[o], edges[o + 1]
        for i in range(int(math.floor(a)), min(int(math.ceil(b)), n_in)):
            m[o, i] = min(b, i + 1) - max(a, i)
    return m / (n_in / n_out)


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    if n_in == n_out:
        return np.eye(n_in)
    if n_in > 2 * n_out:
        return _area_matrix(n_in, n_out)
    return _bilinear_matrix(n_in, n_out)


def resize(img: np.ndarray, size: int) -> np.ndarray:
    """Resize the last two axes to ``size``×``size``: bilinear up to 2×, area averaging beyond."""
    img = np.asarray(img)
    h, w = img.shape[-2:]
    if (h, w) == (size, size):
        return img.copy()
    out = resize_matrix(h, size) @ img.astype(np.float64) @ resize_matrix(w, size).T
    return out.astype(img.dtype if np.issubdtype(img.dtype, np.floating) else np.float32)


def hflip(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[..., ::-1])


def to_unit_range(img: np.ndarray) -> np.ndarray:
    """Integer images are divided by their dtype maximum; float images are clipped."""
    img = np.asarray(img)
    if np.issubdtype(img.dtype, np.integer):
        return img.astype(np.float32) / np.float32(np.iinfo(img.dtype).max)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


@dataclass(frozen=True)
class AffineDraw:
    angle: float = 0.0  # degrees
    shift: tuple[float, float] = (0.0, 0.0)  # fraction of size, (rows, cols)
    scale: float = 1.0
    flip: bool = False

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "AffineDraw":
        return cls(angle=float(rng.uniform(-10, 10)),
                   shift=(float(rng.uniform(-0.05, 0.05)), float(rng.uniform(-0.05, 0.05))),
                   scale=float(rng.uniform(0.95, 1.05)),
                   flip=bool(rng.random() < 0.5))


def affine_view(img: np.ndarray, angle: float = 0.0, shift=(0.0, 0.0), scale: float = 1.0) -> np.ndarray:
    """Rotate/scale about the centre and translate; bilinear resampling with zero fill.

    ``img`` is (..., H, W); leading axes are transformed identically.
    """
    h, w = img.shape[-2:]
    t = math.radians(angle)
    fwd = scale * np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    inv = np.linalg.inv(fwd)
    centre = np.array([(h - 1) / 2, (w - 1) / 2])
    offset_px = np.array([shift[0] * h, shift[1] * w])
    # output coord o maps to input coord inv @ (o - centre - offset) + centre
    offset = centre - inv @ (centre + offset_px)
    flat = img.reshape(-1, h, w)
    out = np.stack([affine_transform(ch.astype(np.float64), inv, offset=offset, order=1, mode="constant", cval=0.0)
                    for ch in flat])
    return out.reshape(img.shape).astype(img.dtype)


def apply_draw(img: np.ndarray, d: AffineDraw) -> np.ndarray:
    out = affine_view(img, d.angle, d.shift, d.scale)
    return hflip(out) if d.flip else out


def augment(study: FourViewStudy, rng: np.random.Generator) -> FourViewStudy:
    """Independent random affine plus horizontal flip per present view."""
    images = list(study.images)
    for i, present in enumerate(study.presence):
        if present:
            images[i] = apply_draw(images[i], AffineDraw.sample(rng))
    return replace(study, images=images)


def study_rng(seed: int, epoch: int, study_id: str) -> np.random.Generator:
    """Augmentation stream keyed by (seed, epoch, study), independent of batch order."""
    return np.random.default_rng([seed, epoch, zlib.crc32(study_id.encode())])


def preprocess(study: FourViewStudy, size: int) -> np.ndarray:
    """Model input (4, 3, S, S) float32: unit range, resize, zero absent views, replicate channels."""
    images = list(study.images)
    for i, present in enumerate(study.presence):
        if present:
            img = to_unit_range(images[i])
            if img.ndim == 2:
                img = img[None]
            images[i] = resize(img[:1], size)
    masked = apply_missing_mask(replace(study, images=images))
    out = np.stack([m.reshape(1, size, size) for m in masked.images]).astype(np.float32)
    return np.repeat(out, 3, axis=1)
