"""Minimal dense-tensor substrate with reverse-mode gradients."""

from .core import DimensionError, Tensor, as_tensor, grad_enabled, no_grad
from .nn import Conv2d, Dropout, InstanceNorm2d, LayerNorm, Linear, Module, Parameter, kaiming_uniform
from .ops import (
    add,
    concat,
    conv2d,
    div,
    dropout,
    exp,
    fft_convolve,
    flip,
    getitem,
    global_avg_pool,
    instance_norm,
    layer_norm,
    linear,
    log,
    log_softmax,
    matmul,
    max,
    mean,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    silu,
    softmax,
    softplus,
    stack,
    standardize,
    sub,
    sum,
    take,
    transpose,
)

__all__ = [
    "Conv2d", "DimensionError", "Dropout", "InstanceNorm2d", "LayerNorm", "Linear", "Module", "Parameter",
    "Tensor", "add", "as_tensor", "concat", "conv2d", "div", "dropout", "exp", "fft_convolve", "flip",
    "getitem", "global_avg_pool", "grad_enabled", "instance_norm", "kaiming_uniform", "layer_norm", "linear",
    "log", "log_softmax", "matmul", "max", "mean", "mul", "neg", "no_grad", "relu", "reshape", "sigmoid",
    "silu", "softmax", "softplus", "stack", "standardize", "sub", "sum", "take", "transpose",
]
