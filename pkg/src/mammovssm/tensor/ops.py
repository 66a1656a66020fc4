"""Differentiable primitives.

Each function computes its forward value with numpy and registers a backward
closure mapping the output gradient to one gradient per parent. Non-tensor
operands are treated as constants and take the dtype of the tensor operand.
"""

from __future__ import annotations

import builtins
from typing import Sequence

import numpy as np

from .core import DimensionError, Tensor, as_tensor

_sum = builtins.sum
_max = builtins.max


def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _const(b, a)
    return _const(a, b), b


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ----------------------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data + b.data
    return Tensor._make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data - b.data
    return Tensor._make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return Tensor._make(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent
    return Tensor._make(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)
    return Tensor._make(out, (a,), lambda g: (g / a.data,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = np.where(mask, a.data, 0).astype(a.dtype)
    return Tensor._make(out, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out * (1 - out),))


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    out = a.data * s
    return Tensor._make(out, (a,), lambda g: (g * (s * (1 + a.data * (1 - s))),))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.logaddexp(0, x).astype(a.dtype)
    return Tensor._make(out, (a,), lambda g: (g * _sigmoid(x),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1 / (1 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1 + ex)
    return out


def astype(a: Tensor, dtype) -> Tensor:
    src = a.dtype
    return Tensor._make(a.data.astype(dtype), (a,), lambda g: (g.astype(src),))


# ----------------------------------------------------------------------------------
# linear algebra
# ----------------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul batch dimensions do not broadcast: {a.shape} @ {b.shape}") from exc

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis of ``x``; weight is (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(lead + (weight.shape[0],))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, weight.shape[0])
        gx = (g2 @ weight.data).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return Tensor._make(out, parents, backward)


# ----------------------------------------------------------------------------------
# shape manipulation
# ----------------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return Tensor._make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def flip(a: Tensor, axis: int) -> Tensor:
    return Tensor._make(np.flip(a.data, axis), (a,), lambda g: (np.flip(g, axis),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._make(out, tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._make(out, tensors, backward)


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]
    idx = index if isinstance(index, tuple) else (index,)
    fancy = any(isinstance(i, (list, np.ndarray)) for i in idx)

    def backward(g):
        full = np.zeros_like(a.data)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] += g
        return (full,)

    return Tensor._make(np.array(out, copy=True), (a,), backward)


def take(a: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in the backward pass."""
    indices = np.asarray(indices)
    out = np.take(a.data, indices, axis=axis)

    def backward(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return Tensor._make(out, (a,), backward)


def pad2d(a: Tensor, pad: int) -> Tensor:
    if pad == 0:
        return a
    width = [(0, 0)] * (a.ndim - 2) + [(pad, pad), (pad, pad)]
    out = np.pad(a.data, width)
    return Tensor._make(out, (a,), lambda g: (g[..., pad:-pad, pad:-pad],))


# ----------------------------------------------------------------------------------
# reductions
# ----------------------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._make(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes]))
    return sum(a, axes, keepdims) * (1.0 / count)


def max(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axis(axis, a.ndim)
    out = a.data.max(axis=axes, keepdims=True)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        hit = a.data == out
        # ties share the gradient equally
        share = hit / hit.sum(axis=axes, keepdims=True)
        return (g * share,)

    value = out if keepdims else np.squeeze(out, axis=axes)
    return Tensor._make(np.asarray(value), (a,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C)."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects B×C×H×W, got {x.shape}")
    return mean(x, axis=(2, 3))


# ----------------------------------------------------------------------------------
# softmax family
# ----------------------------------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (a,), backward)


# ----------------------------------------------------------------------------------
# normalization and regularization
# ----------------------------------------------------------------------------------

def standardize(a: Tensor, axes, eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance over ``axes`` (biased variance)."""
    axes = _norm_axis(axes, a.ndim)
    mu = a.data.mean(axis=axes, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=axes, keepdims=True)
        gx = (g * xhat).mean(axis=axes, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return Tensor._make(xhat.astype(a.dtype), (a,), backward)


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the per-feature affine map."""
    if weight.shape != (x.shape[-1],):
        raise DimensionError(f"layer_norm weight {weight.shape} does not match features of {x.shape}")
    return standardize(x, -1, eps) * weight + bias


def instance_norm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over H×W; no running statistics."""
    if x.ndim != 4:
        raise DimensionError(f"instance_norm expects B×C×H×W, got {x.shape}")
    c = x.shape[1]
    return standardize(x, (2, 3), eps) * weight.reshape(1, c, 1, 1) + bias.reshape(1, c, 1, 1)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return Tensor._make(x.data * keep, (x,), lambda g: (g * keep,))


# ----------------------------------------------------------------------------------
# convolution
# ----------------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Zero-padded 2D cross-correlation. x: (B, C, H, W); w: (F, C, kh, kw)."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects rank-4 input and kernel, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    F, Cw, kh, kw = w.shape
    if C != Cw:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, kernel {w.shape}")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise DimensionError(f"conv2d kernel {w.shape} larger than padded input {(Hp, Wp)}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    if kh == 1 and kw == 1:
        cols = xp[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
        out = np.einsum("bchw,fc->bfhw", cols, w.data[:, :, 0, 0], optimize=True)
    else:
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
        win = win[:, :, ::stride, ::stride][:, :, :Ho, :Wo]  # B, C, Ho, Wo, kh, kw
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * kh * kw)
        out = (cols @ w.data.reshape(F, -1).T).reshape(B, Ho, Wo, F).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data.reshape(1, F, 1, 1)
    out = np.ascontiguousarray(out)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gx = gw = None
        if w.requires_grad:
            if kh == 1 and kw == 1:
                gw = np.einsum("bfhw,bchw->fc", g, cols, optimize=True).reshape(F, C, 1, 1)
            else:
                g2 = g.transpose(0, 2, 3, 1).reshape(-1, F)
                gw = (g2.T @ cols).reshape(F, C, kh, kw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    # (B, F, Ho, Wo) x (F, C) -> (B, C, Ho, Wo)
                    contrib = np.einsum("bfhw,fc->bchw", g, w.data[:, :, i, j], optimize=True)
                    gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += contrib
            gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return Tensor._make(out, parents, backward)


# ----------------------------------------------------------------------------------
# FFT convolution
# ----------------------------------------------------------------------------------

def _next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length() if n > 1 else 1


def _causal_fft(signal: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # time axis is -2
    L = signal.shape[-2]
    n = _next_pow2(2 * L - 1)
    fs = np.fft.rfft(signal, n=n, axis=-2)
    fk = np.fft.rfft(kernel, n=n, axis=-2)
    return np.fft.irfft(fs * fk, n=n, axis=-2)[..., :L, :]


def fft_convolve(signal, kernel) -> Tensor:
    """Per-channel causal convolution ``y_t = sum_{i<=t} k_{t-i} s_i``, length L.

    Both operands are (..., L, d) with time on axis -2.
    """
    signal, kernel = _pair(as_tensor(signal), kernel)
    if signal.shape[-1] != kernel.shape[-1]:
        raise DimensionError(f"fft_convolve channel mismatch: {signal.shape} vs {kernel.shape}")
    if signal.shape[-2] != kernel.shape[-2]:
        raise DimensionError(f"fft_convolve length mismatch: {signal.shape} vs {kernel.shape}")
    out = _causal_fft(signal.data, kernel.data).astype(signal.dtype)

    def backward(g):
        gr = np.flip(g, axis=-2)
        gs = np.flip(_causal_fft(gr, np.broadcast_to(kernel.data, g.shape)), axis=-2) if signal.requires_grad else None
        gk = np.flip(_causal_fft(gr, np.broadcast_to(signal.data, g.shape)), axis=-2) if kernel.requires_grad else None
        gs = None if gs is None else _unbroadcast(gs.astype(signal.dtype), signal.shape)
        gk = None if gk is None else _unbroadcast(gk.astype(kernel.dtype), kernel.shape)
        return gs, gk

    return Tensor._make(out, (signal, kernel), backward)
