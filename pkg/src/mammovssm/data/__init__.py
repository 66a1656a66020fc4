from .io import (
    LabelError,
    ManifestError,
    MissingImageError,
    PartialSideError,
    export,
    ingest,
    read_pgm,
    write_pgm,
)
from .split import patient_split
from .study import (
    BIRADS_SETS,
    MISSING,
    VIEW_NAMES,
    DataError,
    FourViewStudy,
    StudyLabels,
    apply_missing_mask,
    validate_study,
)
from .synthetic import LesionGeometry, SyntheticSpec, generate_synthetic
from .transforms import AffineDraw, affine_view, augment, hflip, preprocess, resize, study_rng

__all__ = [
    "AffineDraw", "BIRADS_SETS", "DataError", "FourViewStudy", "LabelError", "LesionGeometry", "MISSING",
    "ManifestError", "MissingImageError", "PartialSideError", "StudyLabels", "SyntheticSpec", "VIEW_NAMES",
    "affine_view", "apply_missing_mask", "augment", "export", "generate_synthetic", "hflip", "ingest",
    "patient_split", "preprocess", "read_pgm", "resize", "study_rng", "validate_study", "write_pgm",
]
