"""Optimizers and the cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ContractError, ShapeError


def cosine_lr(t: int, total: int, base: float) -> float:
    """``base * 0.5 * (1 + cos(pi * t / total))``."""
    if t < 0 or t > total:
        raise ContractError(f"step {t} outside [0, {total}]")
    if total == 0:
        return base
    return base * 0.5 * (1.0 + math.cos(math.pi * t / total))


class Adam:
    """Adam with bias correction and optional L2 weight decay.

    ``params`` is an ordered list of tensors; gradients are read from
    ``p.grad``. Parameters whose gradient is ``None`` are skipped entirely
    (their moments and per-parameter step counts do not advance), so
    quantization parameters of configurations that were not sampled stay put.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.steps = [0] * len(self.params)
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, (p, m, v) in enumerate(zip(self.params, self.m, self.v)):
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeError("gradient shape does not match parameter")
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.steps[i] += 1
            k = self.steps[i]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**k)
            v_hat = v / (1.0 - b2**k)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self):
        return {
            "t": self.t,
            "steps": list(self.steps),
            "m": [a.copy() for a in self.m],
            "v": [a.copy() for a in self.v],
        }

    def load_state_dict(self, state):
        if len(state["m"]) != len(self.params):
            raise ShapeError("optimizer state does not match parameter list")
        self.t = int(state["t"])
        self.steps = [int(k) for k in state["steps"]]
        self.m = [np.array(a, dtype=np.float64) for a in state["m"]]
        self.v = [np.array(a, dtype=np.float64) for a in state["v"]]


def adam_step(state: Adam, params, grads, lr=None):
    """Functional wrapper: set gradients on ``params`` and apply one Adam step."""
    for p, g in zip(params, grads):
        p.grad = None if g is None else np.asarray(g, dtype=np.float64)
    state.step(lr)
    return params


class SGD:
    """SGD with heavy-ball momentum and L2 weight decay."""

    def __init__(self, params, lr=0.01, momentum=0.0, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.t = 0
        self.buf = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        for p, b in zip(self.params, self.buf):
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            b *= self.momentum
            b += g
            p.data = p.data - lr * b

    def state_dict(self):
        return {"t": self.t, "buf": [a.copy() for a in self.buf]}

    def load_state_dict(self, state):
        self.t = int(state["t"])
        self.buf = [np.array(a, dtype=np.float64) for a in state["buf"]]
