"""Minimal reverse-mode differentiable numerics in double precision."""

from .ops import (
    batchnorm,
    central_moment,
    conv2d,
    cross_entropy,
    exp,
    flatten,
    global_avg_pool,
    fake_quant,
    kl_divergence,
    linear,
    log,
    log_softmax,
    matmul,
    mean,
    relu,
    sigmoid,
    softmax,
    swish,
    variance,
)
from .optim import SGD, Adam, adam_step, cosine_lr
from .tensor import Tape, Tensor, as_tensor, backward, is_grad_enabled, no_grad

__all__ = [
    "Adam",
    "SGD",
    "Tape",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "batchnorm",
    "central_moment",
    "conv2d",
    "cosine_lr",
    "cross_entropy",
    "exp",
    "fake_quant",
    "flatten",
    "global_avg_pool",
    "is_grad_enabled",
    "kl_divergence",
    "linear",
    "log",
    "log_softmax",
    "matmul",
    "mean",
    "no_grad",
    "relu",
    "sigmoid",
    "softmax",
    "swish",
    "variance",
]
