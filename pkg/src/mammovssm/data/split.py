"""Patient-level train/validation split."""

from __future__ import annotations

import numpy as np

from .study import FourViewStudy


def patient_split(studies: list[FourViewStudy], val_fraction: float = 0.2,
                  seed: int = 0) -> tuple[list[FourViewStudy], list[FourViewStudy]]:
    """Every study of a patient lands on the same side of the split."""
    patients = sorted({s.meta.get("patient_id", s.study_id) for s in studies})
    order = np.random.default_rng(seed).permutation(len(patients))
    n_val = int(round(val_fraction * len(patients)))
    val_patients = {patients[i] for i in order[:n_val]}
    train = [s for s in studies if s.meta.get("patient_id", s.study_id) not in val_patients]
    val = [s for s in studies if s.meta.get("patient_id", s.study_id) in val_patients]
    return train, val
