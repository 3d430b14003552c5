"""Minimal network kernel: convolution, pooling, dense, GRU, activations."""
from .backend import BACKEND
from .gradcheck import finite_diff_grad, max_relative_error, relative_error
from .ops import (
    ConvParams,
    DenseParams,
    GruParams,
    bigru,
    conv2d,
    dense,
    gru_step,
    leaky_relu,
    maxpool,
    sigmoid,
    softmax,
    tanh,
)

__all__ = [
    "BACKEND",
    "ConvParams",
    "DenseParams",
    "GruParams",
    "bigru",
    "conv2d",
    "dense",
    "finite_diff_grad",
    "gru_step",
    "leaky_relu",
    "max_relative_error",
    "maxpool",
    "relative_error",
    "sigmoid",
    "softmax",
    "tanh",
]
