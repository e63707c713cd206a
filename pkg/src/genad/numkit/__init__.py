"""Minimal float64 tensor library with reverse-mode autodiff."""

from .ops import (
    attention,
    bce,
    concat,
    cross_entropy,
    embedding,
    exp,
    layer_norm,
    linear,
    log,
    log_softmax,
    losses,
    matmul,
    mean,
    relu,
    reshape,
    sigmoid,
    softmax,
    square,
    tanh,
    transpose,
)
from .optim import Adam, adam_step
from .tensor import DimensionError, NumericError, Tensor, grad_enabled, no_grad, topo_order

__all__ = [
    "Adam", "DimensionError", "NumericError", "Tensor", "adam_step", "attention", "bce",
    "concat", "cross_entropy", "embedding", "exp", "grad_enabled", "layer_norm", "linear",
    "log", "log_softmax", "losses", "matmul", "mean", "no_grad", "relu", "reshape",
    "sigmoid", "softmax", "square", "tanh", "topo_order", "transpose",
]
