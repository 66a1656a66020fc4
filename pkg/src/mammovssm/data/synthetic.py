"""Seeded synthetic four-view studies with grade-controlled planted lesions.

Images are generated in canonical orientation (chest wall on the left for every
view), so no flip is needed after generation. Pixel values are quantized to
multiples of 1/255 so they survive an 8-bit round trip exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import ConfigurationError
from .study import MISSING, FourViewStudy, StudyLabels


@dataclass(frozen=True)
class LesionGeometry:
    blobs: tuple[int, int]  # inclusive range of planted blob count
    radius: tuple[float, float]  # as a fraction of image size
    intensity: float


DEFAULT_GEOMETRY = {
    1: LesionGeometry((0, 0), (0.0, 0.0), 0.0),
    2: LesionGeometry((1, 1), (0.04, 0.06), 0.10),
    3: LesionGeometry((1, 2), (0.05, 0.08), 0.18),
    4: LesionGeometry((1, 2), (0.07, 0.10), 0.30),
    5: LesionGeometry((2, 3), (0.09, 0.13), 0.45),
}


@dataclass
class SyntheticSpec:
    image_size: int = 64
    birads_classes: Sequence[int] = (1, 5)
    mixture: Optional[Sequence[float]] = None  # per active grade; None -> uniform
    missing_side_prob: float = 0.1
    divergence: float = 0.1  # P(malignant | grade 3)
    texture_noise: float = 0.03
    geometry: dict = field(default_factory=lambda: dict(DEFAULT_GEOMETRY))
    seed: int = 0

    def __post_init__(self):
        self.birads_classes = tuple(int(g) for g in self.birads_classes)
        k = len(self.birads_classes)
        if self.mixture is None:
            self.mixture = tuple([1.0 / k] * k)
        mix = np.asarray(self.mixture, dtype=float)
        if mix.shape != (k,) or np.any(mix < 0) or abs(mix.sum() - 1) > 1e-9:
            raise ConfigurationError(f"mixture {tuple(self.mixture)} must be {k} nonnegative weights summing to 1")
        self.mixture = tuple(float(m) for m in mix)
        missing = [g for g in self.birads_classes if g not in self.geometry]
        if missing:
            raise ConfigurationError(f"no lesion geometry for BI-RADS grades {missing}")
        if not 0 <= self.missing_side_prob <= 1:
            raise ConfigurationError("missing-side probability must be in [0, 1]")


def quantize(img: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats onto the 8-bit grid, returned as float32 k/255."""
    k = np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    return to_unit(k, 255)


def to_unit(k: np.ndarray, maxval: int) -> np.ndarray:
    return k.astype(np.float32) / np.float32(maxval)


def diagnosis_for(grade: int, rng: np.random.Generator, divergence: float) -> int:
    if grade >= 4:
        return 1
    if grade == 3:
        return int(rng.random() < divergence)
    return 0


def _breast_mask(S: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:S, 0:S] / S
    a = rng.uniform(0.65, 0.85)
    b = rng.uniform(0.38, 0.46)
    cy = 0.5 + rng.uniform(-0.03, 0.03)
    return ((xx / a) ** 2 + ((yy - cy) / b) ** 2) <= 1.0


def _tissue(S: int, rng: np.random.Generator, mask: np.ndarray, noise: float) -> np.ndarray:
    base = gaussian_filter(rng.standard_normal((S, S)), sigma=S / 16, mode="wrap")
    base = base / (np.abs(base).max() + 1e-12)
    img = (0.35 + 0.08 * base + noise * rng.standard_normal((S, S))) * mask
    return gaussian_filter(img, 0.6)


def _blob(S: int, cx: float, cy: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:S, 0:S] / S
    return np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * (r / 1.5) ** 2))


def _lesions(grade_geo: LesionGeometry, rng: np.random.Generator) -> list[tuple[float, float, float]]:
    lo, hi = grade_geo.blobs
    count = int(rng.integers(lo, hi + 1))
    return [(rng.uniform(0.12, 0.5), rng.uniform(0.3, 0.7), rng.uniform(*grade_geo.radius)) for _ in range(count)]


def _side_views(S: int, geo: LesionGeometry, spec: SyntheticSpec, rng: np.random.Generator) -> list[np.ndarray]:
    lesions = _lesions(geo, rng)
    views = []
    for view in range(2):  # CC then MLO
        mask = _breast_mask(S, rng)
        img = _tissue(S, rng, mask, spec.texture_noise)
        for cx, cy, r in lesions:
            if view == 1:  # same lesion seen from the oblique projection
                cx = cx + rng.normal(0, 0.03)
                cy = 0.8 * cy + 0.1 + rng.normal(0, 0.03)
                r = r * rng.uniform(0.9, 1.1)
            img = img + geo.intensity * _blob(S, cx, cy, r) * mask
        views.append(quantize(img)[None])
    return views


def generate_study(spec: SyntheticSpec, index: int) -> FourViewStudy:
    """Study ``index`` depends only on (spec, index), not on how many are generated."""
    rng = np.random.default_rng([spec.seed, index])
    S = spec.image_size
    present = [True, True]
    if rng.random() < spec.missing_side_prob:
        present[int(rng.integers(2))] = False
    images: list = [None] * 4
    labels = {}
    for side, ok in enumerate(present):
        key = "lr"[side]
        if not ok:
            labels[f"label_{key}"] = labels[f"birads_{key}"] = MISSING
            continue
        grade = spec.birads_classes[int(rng.choice(len(spec.birads_classes), p=spec.mixture))]
        labels[f"label_{key}"] = diagnosis_for(grade, rng, spec.divergence)
        labels[f"birads_{key}"] = grade
        images[2 * side:2 * side + 2] = _side_views(S, spec.geometry[grade], spec, rng)
    sid = f"syn{spec.seed}-{index:05d}"
    presence = (present[0], present[0], present[1], present[1])
    return FourViewStudy(images, presence, StudyLabels(**labels), sid, meta={"patient_id": sid})


def generate_synthetic(spec: SyntheticSpec, n: int) -> list[FourViewStudy]:
    if n < 1:
        raise ConfigurationError(f"study count must be at least 1, got {n}")
    return [generate_study(spec, i) for i in range(n)]
