"""Minimal NCHW tensor numerics with reverse-mode differentiation."""

from .kernels import BACKEND
from .nn import BatchNorm2d, Conv2d, Module
from .ops import (
    ShapeError,
    activation,
    add,
    batchnorm,
    concat,
    conv2d,
    conv_transpose2x2,
    depthwise_long_conv,
    mean,
    mul,
    permute,
    relu,
    sigmoid,
    slice_outer_product,
    softmax_channels,
    swish,
    upsample_nearest2x,
)
from .serialize import read_container, write_container
from .tensor import Tape, Tensor, active_tape, backward

__all__ = [
    "BACKEND", "BatchNorm2d", "Conv2d", "Module", "ShapeError", "Tape", "Tensor",
    "activation", "active_tape", "add", "backward", "batchnorm", "concat", "conv2d",
    "conv_transpose2x2", "depthwise_long_conv", "mean", "mul", "permute",
    "read_container", "relu", "sigmoid", "slice_outer_product", "softmax_channels",
    "swish", "upsample_nearest2x", "write_container",
]
