"""On-disk datasets: binary PGM images plus a CSV manifest."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ..errors import DataError
from .study import MISSING, RIGHT_VIEWS, VIEW_NAMES, FourViewStudy, StudyLabels
from .transforms import hflip, resize

MANIFEST = "manifest.csv"
COLUMNS = ("study_id", "lcc", "lmlo", "rcc", "rmlo", "label_l", "label_r", "birads_l", "birads_r")
PATIENT = "patient_id"  # optional trailing column; defaults to the study id


class ManifestError(DataError):
    pass


class MissingImageError(DataError):
    pass


class PartialSideError(DataError):
    pass


class LabelError(DataError):
    pass


def write_pgm(path: Path | str, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype not in (np.uint8, np.uint16):
        raise ValueError(f"PGM needs a 2-D uint8/uint16 array, got {img.dtype} {img.shape}")
    maxval = 255 if img.dtype == np.uint8 else 65535
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(img.astype(">u2" if maxval > 255 else np.uint8).tobytes())


def _header_tokens(raw: bytes) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(raw[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte precedes the raster


def read_pgm(path: Path | str) -> tuple[np.ndarray, int]:
    """Returns (raster as uint8/uint16, maxval)."""
    raw = Path(path).read_bytes()
    tokens, pos = _header_tokens(raw)
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: bad maxval {maxval}")
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    count = w * h
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    img = data.reshape(h, w)
    return (img.astype(np.uint16) if maxval >= 256 else img.copy()), maxval


def _parse_int(value: str, sid: str, column: str) -> int:
    try:
        return int(value) if value.strip() != "" else MISSING
    except ValueError:
        raise LabelError(f"study {sid}: column {column} is not an integer: {value!r}") from None


def _check_labels(sid: str, labels: StudyLabels, presence, birads_classes: Sequence[int]) -> None:
    for side, present in (("l", presence[0]), ("r", presence[2])):
        label, grade = labels.side(side)
        if label not in (MISSING, 0, 1):
            raise LabelError(f"study {sid}: label_{side}={label} is outside {{-1, 0, 1}}")
        if grade != MISSING and grade not in birads_classes:
            raise LabelError(f"study {sid}: birads_{side}={grade} is outside the active set {tuple(birads_classes)}")
        if present and MISSING in (label, grade):
            raise LabelError(f"study {sid}: side {side.upper()} has images but a missing label")
        if not present and (label, grade) != (MISSING, MISSING):
            raise LabelError(f"study {sid}: side {side.upper()} has no images but carries labels")


def ingest(directory: Path | str, image_size: Optional[int] = None,
           birads_classes: Sequence[int] = (1, 2, 3, 4, 5)) -> list[FourViewStudy]:
    """Load and validate a manifest directory; right views are flipped to canonical orientation."""
    root = Path(directory)
    manifest = root / MANIFEST
    if not manifest.exists():
        raise ManifestError(f"{manifest} not found")
    studies = []
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) not in (COLUMNS, COLUMNS + (PATIENT,)):
            raise ManifestError(f"manifest header must be {','.join(COLUMNS)}[,{PATIENT}], got {reader.fieldnames}")
        for row in reader:
            studies.append(_ingest_row(root, row, image_size, birads_classes))
    return studies


def _ingest_row(root: Path, row: dict, image_size, birads_classes) -> FourViewStudy:
    sid = row["study_id"]
    paths = [row[v].strip() for v in VIEW_NAMES]
    presence = tuple(bool(p) for p in paths)
    for side, (a, b) in (("left", (0, 1)), ("right", (2, 3))):
        if presence[a] != presence[b]:
            raise PartialSideError(f"study {sid}: within-side partial views on the {side} side")
    labels = StudyLabels(*(_parse_int(row[c], sid, c) for c in COLUMNS[5:9]))
    _check_labels(sid, labels, presence, birads_classes)
    images: list = [None] * 4
    for i, rel in enumerate(paths):
        if not rel:
            continue
        path = root / rel
        if not path.exists():
            raise MissingImageError(f"study {sid}: view {VIEW_NAMES[i]} file {rel} does not exist")
        raster, maxval = read_pgm(path)
        img = raster.astype(np.float32) / np.float32(maxval)
        if i in RIGHT_VIEWS:
            img = hflip(img)
        if image_size is not None:
            img = resize(img, image_size)
        images[i] = img[None]
    patient = (row.get(PATIENT) or "").strip() or sid
    return FourViewStudy(images, presence, labels, sid, meta={"patient_id": patient})


def export(studies: Iterable[FourViewStudy], directory: Path | str, bits: int = 8) -> Path:
    """Write PGMs and a manifest; right views are un-flipped to acquisition orientation."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    maxval = 255 if bits == 8 else 65535
    dtype = np.uint8 if bits == 8 else np.uint16
    with open(root / MANIFEST, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS + (PATIENT,))
        for s in studies:
            cells = []
            for i, present in enumerate(s.presence):
                if not present:
                    cells.append("")
                    continue
                img = np.asarray(s.images[i]).reshape(np.shape(s.images[i])[-2:])
                if i in RIGHT_VIEWS:
                    img = hflip(img)
                name = f"{s.study_id}_{VIEW_NAMES[i]}.pgm"
                write_pgm(root / name, np.round(np.clip(img, 0, 1) * maxval).astype(dtype))
                cells.append(name)
            lab = s.labels
            writer.writerow([s.study_id, *cells, lab.label_l, lab.label_r, lab.birads_l, lab.birads_r,
                             s.meta.get("patient_id", s.study_id)])
    return root
