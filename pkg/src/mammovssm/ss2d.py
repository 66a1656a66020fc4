"""2D selective scan: four directed serializations of a token grid, one
selective scan per direction, and a sum merge back onto the grid."""

from __future__ import annotations

import enum
from typing import Sequence

import numpy as np

from .ssm import SelectiveScan
from .tensor import Tensor, ops
from .tensor.core import DimensionError


class ScanPath(enum.Enum):
    ROW_FORWARD = 0
    ROW_REVERSE = 1
    COL_FORWARD = 2
    COL_REVERSE = 3

    def order(self, H: int, W: int) -> np.ndarray:
        """Sequence position k visits row-major grid cell ``order[k]``."""
        grid = np.arange(H * W).reshape(H, W)
        seq = grid.ravel() if self in (ScanPath.ROW_FORWARD, ScanPath.ROW_REVERSE) else grid.T.ravel()
        if self in (ScanPath.ROW_REVERSE, ScanPath.COL_REVERSE):
            seq = seq[::-1]
        return seq.copy()

    def inverse(self, H: int, W: int) -> np.ndarray:
        return np.argsort(self.order(H, W))


PATHS = tuple(ScanPath)


def serialize(grid, path: ScanPath):
    """(..., H, W, d) -> (..., H*W, d) along ``path``. Accepts arrays or tensors."""
    H, W, d = grid.shape[-3:]
    lead = grid.shape[:-3]
    order = path.order(H, W)
    if isinstance(grid, Tensor):
        return ops.take(grid.reshape(*lead, H * W, d), order, axis=grid.ndim - 3)
    return np.asarray(grid).reshape(*lead, H * W, d)[..., order, :]


def deserialize(seq, path: ScanPath, H: int, W: int):
    """Inverse of ``serialize``: (..., H*W, d) -> (..., H, W, d)."""
    L, d = seq.shape[-2:]
    if L != H * W:
        raise DimensionError(f"sequence length {L} does not fit a {H}x{W} grid")
    lead = seq.shape[:-2]
    inv = path.inverse(H, W)
    if isinstance(seq, Tensor):
        return ops.take(seq, inv, axis=seq.ndim - 2).reshape(*lead, H, W, d)
    return np.asarray(seq)[..., inv, :].reshape(*lead, H, W, d)


def ss2d_forward(grid: Tensor, scans: SelectiveScan | Sequence[SelectiveScan]) -> Tensor:
    """Scan ``grid`` (H, W, d) or (M, H, W, d) along all four paths and sum the results.

    ``scans`` is either one shared ``SelectiveScan`` or four, one per path in
    ``PATHS`` order.
    """
    if not isinstance(grid, Tensor):
        grid = Tensor(grid)
    squeeze = grid.ndim == 3
    if squeeze:
        grid = grid.reshape(1, *grid.shape)
    M, H, W, d = grid.shape
    if H * W == 0:
        raise DimensionError("ss2d needs a nonempty grid")

    if isinstance(scans, SelectiveScan):
        # one batched scan over all four serializations
        seqs = ops.concat([serialize(grid, p) for p in PATHS], axis=0)  # (4M, L, d)
        ys = scans(seqs)
        outs = [deserialize(ys[k * M:(k + 1) * M], p, H, W) for k, p in enumerate(PATHS)]
    else:
        if len(scans) != len(PATHS):
            raise ValueError(f"need one scan per path ({len(PATHS)}), got {len(scans)}")
        outs = [deserialize(sc(serialize(grid, p)), p, H, W) for sc, p in zip(scans, PATHS)]

    merged = outs[0]
    for o in outs[1:]:
        merged = merged + o
    return merged.reshape(H, W, d) if squeeze else merged
