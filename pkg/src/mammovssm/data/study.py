"""Four-view study records and their invariants."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ..errors import DataError

VIEW_NAMES = ("lcc", "lmlo", "rcc", "rmlo")
LEFT_VIEWS = (0, 1)
RIGHT_VIEWS = (2, 3)
BIRADS_SETS = {"15": (1, 5), "135": (1, 3, 5), "12345": (1, 2, 3, 4, 5)}
MISSING = -1


@dataclass(frozen=True)
class StudyLabels:
    label_l: int = MISSING
    label_r: int = MISSING
    birads_l: int = MISSING
    birads_r: int = MISSING

    def side(self, side: str) -> tuple[int, int]:
        return (self.label_l, self.birads_l) if side == "l" else (self.label_r, self.birads_r)


@dataclass
class FourViewStudy:
    images: list[Optional[np.ndarray]]
    presence: tuple[bool, bool, bool, bool]
    labels: StudyLabels
    study_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != 4 or len(self.presence) != 4:
            raise DataError(f"study {self.study_id}: need exactly four view slots")
        self.presence = tuple(bool(p) for p in self.presence)

    @property
    def left_present(self) -> bool:
        return self.presence[0] and self.presence[1]

    @property
    def right_present(self) -> bool:
        return self.presence[2] and self.presence[3]

    def image_shape(self) -> tuple[int, ...]:
        for present, img in zip(self.presence, self.images):
            if present and img is not None:
                return np.shape(img)
        raise DataError(f"study {self.study_id}: no view is present")

    def copy(self) -> "FourViewStudy":
        return replace(self, images=[None if im is None else np.array(im, copy=True) for im in self.images],
                       meta=dict(self.meta))


def validate_study(study: FourViewStudy, birads_classes: Sequence[int] | None = None) -> None:
    """Check presence/label consistency; raises ``DataError`` naming the study."""
    sid = study.study_id
    for i, present in enumerate(study.presence):
        if present and study.images[i] is None:
            raise DataError(f"study {sid}: view {VIEW_NAMES[i]} marked present but has no image")
    for side, views in (("left", LEFT_VIEWS), ("right", RIGHT_VIEWS)):
        p = [study.presence[v] for v in views]
        if p[0] != p[1]:
            raise DataError(f"study {sid}: within-side partial views on the {side} side")
    if not any(study.presence):
        raise DataError(f"study {sid}: no view is present")
    lab = study.labels
    for side, present in (("l", study.left_present), ("r", study.right_present)):
        label, birads = lab.side(side)
        if not present and (label != MISSING or birads != MISSING):
            raise DataError(f"study {sid}: side {side.upper()} is absent but carries labels")
        if present and (label == MISSING or birads == MISSING):
            raise DataError(f"study {sid}: side {side.upper()} is present but has a missing label")
        if label not in (MISSING, 0, 1):
            raise DataError(f"study {sid}: diagnostic label {label} out of range")
        valid = birads_classes if birads_classes is not None else (1, 2, 3, 4, 5)
        if birads != MISSING and birads not in valid:
            raise DataError(f"study {sid}: BI-RADS {birads} not in active set {tuple(valid)}")


def apply_missing_mask(study: FourViewStudy) -> FourViewStudy:
    """Absent view slots become exact zeros; present views pass through unchanged."""
    for i, present in enumerate(study.presence):
        if present and study.images[i] is None:
            raise DataError(f"study {study.study_id}: view {VIEW_NAMES[i]} marked present but has no image")
    shape = study.image_shape()
    dtype = next(np.asarray(im).dtype for p, im in zip(study.presence, study.images) if p)
    images = [im if present else np.zeros(shape, dtype=dtype)
              for im, present in zip(study.images, study.presence)]
    return replace(study, images=images)
