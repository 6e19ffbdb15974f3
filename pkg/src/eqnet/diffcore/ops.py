"""Differentiable operations used by the supernet and the predictor."""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import InputError, ShapeError
from ..quantizer import QuantParams, QuantSpec, fake_quantize_with_grads, reduce_param_grads
from .tensor import Tensor, as_tensor


def matmul(a, b) -> Tensor:
    return as_tensor(a) @ as_tensor(b)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` with ``w`` stored as (out_features, in_features)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    xd, wd = x.data, w.data
    y = Tensor._node(xd @ wd.T, (x, w), lambda g: (g @ wd, g.T @ xd))
    return y if b is None else y + b


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {w.shape}")
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    y = kernels.conv2d_forward(xd, wd, stride, padding)

    def back(g):
        gx, gw = kernels.conv2d_backward(xd, wd, np.ascontiguousarray(g), stride, padding)
        return gx, gw

    out = Tensor._node(y, (x, w), back)
    if b is not None:
        out = out + as_tensor(b).reshape(1, -1, 1, 1)
    return out


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return Tensor._node(s, (x,), lambda g: (g * s * (1.0 - s),))


def swish(x: Tensor) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    s = 0.5 * (1.0 + np.tanh(0.5 * xd))
    return Tensor._node(xd * s, (x,), lambda g: (g * (s + xd * s * (1.0 - s)),))


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data)
    return Tensor._node(e, (x,), lambda g: (g * e,))


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return Tensor._node(np.log(xd), (x,), lambda g: (g / xd,))


def flatten(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0], -1)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    return as_tensor(x).mean(axis=(2, 3))


def _softmax_np(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax_np(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(x: Tensor) -> Tensor:
    x = as_tensor(x)
    p = _softmax_np(x.data)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return Tensor._node(p, (x,), back)


def log_softmax(x: Tensor) -> Tensor:
    x = as_tensor(x)
    ls = _log_softmax_np(x.data)
    p = np.exp(ls)
    return Tensor._node(ls, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def _check_labels(logits, labels):
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError("logits must be (batch, classes)")
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {logits.shape[0]}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise InputError("labels must be integers")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise InputError("label index out of range")
    return labels


def cross_entropy(logits: Tensor, labels, smoothing: float = 0.0) -> Tensor:
    """Mean cross-entropy against integer labels, optionally label-smoothed."""
    logits = as_tensor(logits)
    labels = _check_labels(logits.data, labels)
    n, k = logits.shape
    target = np.full((n, k), smoothing / k)
    target[np.arange(n), labels] += 1.0 - smoothing
    ls = _log_softmax_np(logits.data)
    loss = -(target * ls).sum() / n
    p = np.exp(ls)
    return Tensor._node(np.asarray(loss), (logits,), lambda g: (g * (p - target) / n,))


def kl_divergence(student: Tensor, teacher) -> Tensor:
    """Batch-mean KL(softmax(teacher) || softmax(student)); teacher is detached."""
    student = as_tensor(student)
    t = teacher.data if isinstance(teacher, Tensor) else np.asarray(teacher, dtype=np.float64)
    if t.shape != student.shape:
        raise ShapeError("student and teacher logits differ in shape")
    n = student.shape[0]
    lt = _log_softmax_np(t)
    pt = np.exp(lt)
    ls = _log_softmax_np(student.data)
    loss = (pt * (lt - ls)).sum() / n
    ps = np.exp(ls)
    return Tensor._node(np.asarray(loss), (student,), lambda g: (g * (ps - pt) / n,))


def mean(x: Tensor) -> Tensor:
    return as_tensor(x).mean()


def central_moment(x: Tensor, k: int) -> Tensor:
    """Population central moment E[(x - mean)^k] over all elements."""
    x = as_tensor(x)
    n = x.size
    d = x.data - x.data.mean()
    m = np.mean(d**k)

    def back(g):
        dk1 = d ** (k - 1)
        return (g * (k / n) * (dk1 - dk1.mean()),)

    return Tensor._node(np.asarray(m), (x,), back)


def variance(x: Tensor) -> Tensor:
    return central_moment(x, 2)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, mean=None, var=None, eps: float = 1e-5):
    """Normalize over every axis except 1.

    With ``mean``/``var`` given the op is affine in ``x`` (eval mode);
    otherwise batch statistics are used. Returns ``(y, batch_mean, batch_var)``
    where the batch statistics are population (biased) moments.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim not in (2, 4):
        raise ShapeError("batchnorm expects (N, C) or (N, C, H, W) input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("batchnorm affine parameters must have one entry per channel")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, c) if x.ndim == 2 else (1, c, 1, 1)
    xd = x.data
    if mean is None:
        mu = xd.mean(axis=axes)
        v = xd.var(axis=axes)
        batch_stats = True
    else:
        mu = np.asarray(mean, dtype=np.float64)
        v = np.asarray(var, dtype=np.float64)
        batch_stats = False
    inv = 1.0 / np.sqrt(v + eps)
    xhat = (xd - mu.reshape(bshape)) * inv.reshape(bshape)
    gd = gamma.data.reshape(bshape)
    y = xhat * gd + beta.data.reshape(bshape)
    m = xd.size // c

    def back(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gd
        if batch_stats:
            gx = (inv.reshape(bshape) / m) * (
                m * gxhat
                - gxhat.sum(axis=axes).reshape(bshape)
                - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape)
            )
        else:
            gx = gxhat * inv.reshape(bshape)
        return gx, ggamma, gbeta

    return Tensor._node(y, (x, gamma, beta), back), mu, v


def fake_quant(x: Tensor, step: Tensor, zero: Tensor, spec: QuantSpec, grad_scale=None) -> Tensor:
    """Differentiable fake-quantization with learnable step and zero-point.

    Gradients follow the straight-through estimator for ``x`` and the
    learned-step-size rules for ``step``/``zero``; ``grad_scale=None`` uses
    1/sqrt(N * qmax) on the step gradient.
    """
    x, step, zero = as_tensor(x), as_tensor(step), as_tensor(zero)
    p = QuantParams(step.data, zero.data)
    out, dstep, inside = fake_quantize_with_grads(x.data, p, spec)

    def back(g):
        gx = np.where(inside, g, 0.0)
        gs, gz = reduce_param_grads(spec, p, g, dstep, inside, grad_scale)
        return gx, gs.reshape(step.shape), gz.reshape(zero.shape)

    return Tensor._node(out, (x, step, zero), back)
