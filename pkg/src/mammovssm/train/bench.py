"""Wall-clock scaling of the scan modes with sequence length."""

from __future__ import annotations

import time
from typing import Iterable

import numpy as np

from ..ss2d import ss2d_forward
from ..ssm import SelectiveScan, SsmParams, discretize, scan_kernel, scan_recurrent
from ..tensor import Tensor, no_grad

MODES = ("recurrent", "kernel", "ss2d")


def _best_time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def bench(lengths: Iterable[int] = (1024, 2048, 4096, 8192), state: int = 16, channels: int = 1,
          modes: Iterable[str] = MODES, repeats: int = 3, seed: int = 0) -> list[dict]:
    """Rows of (mode, L, seconds); ss2d uses the most square grid with H*W == L."""
    rng = np.random.default_rng(seed)
    A = -rng.uniform(0.1, 1.0, state)
    p = SsmParams(A=A, B=rng.standard_normal((state, channels)), C=rng.standard_normal((channels, state)),
                  delta=0.1)
    system = discretize(p)
    scan = SelectiveScan(channels, state, rng, dtype=np.float64)
    rows = []
    for L in lengths:
        x = rng.standard_normal((L, channels))
        for mode in modes:
            if mode == "recurrent":
                fn = lambda: scan_recurrent(system, x)  # noqa: E731
            elif mode == "kernel":
                fn = lambda: scan_kernel(system, x)  # noqa: E731
            elif mode == "ss2d":
                h = int(np.sqrt(L))
                while L % h:
                    h -= 1
                grid = Tensor(x.reshape(h, L // h, channels))

                def fn(grid=grid):
                    with no_grad():
                        ss2d_forward(grid, scan)
            else:
                raise ValueError(f"unknown bench mode {mode!r}")
            rows.append({"mode": mode, "L": L, "seconds": _best_time(fn, repeats)})
    return rows


def doubling_ratios(rows: list[dict], mode: str = "recurrent") -> list[float]:
    times = sorted((r["L"], r["seconds"]) for r in rows if r["mode"] == mode)
    return [b[1] / a[1] for a, b in zip(times, times[1:]) if b[0] == 2 * a[0]]
