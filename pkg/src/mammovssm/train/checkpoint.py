"""Versioned binary checkpoints.

Layout (little-endian): magic ``VSMK``, u32 format version, u32 config length,
UTF-8 JSON config, u32 tensor count, then per tensor: u16 name length, name,
u8 dtype code, u8 rank, rank × u32 dims, raw payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VSMK"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
CODES = {np.dtype(v).newbyteorder("="): k for k, v in DTYPES.items()}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: Path | str, tensors: dict[str, np.ndarray], config: dict) -> None:
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        code = CODES.get(arr.dtype.newbyteorder("="))
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: Path | str) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    version, n = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    config = json.loads(raw[pos:pos + n].decode("utf-8"))
    pos += n
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", raw, pos)
        name = raw[pos + 2:pos + 2 + ln].decode("utf-8")
        pos += 2 + ln
        code, rank = struct.unpack_from("<BB", raw, pos)
        pos += 2
        if code not in DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name}")
        shape = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        dt = DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        tensors[name] = np.frombuffer(raw, dtype=dt, count=size // dt.itemsize, offset=pos).reshape(shape).astype(
            dt.newbyteorder("="))
        pos += size
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return tensors, config
