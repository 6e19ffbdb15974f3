"""Sandwich-rule supernet training."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import diffcore as dc
from ..diffcore import Adam, Tensor, cosine_lr
from ..errors import ContractError
from .losses import GroupLogits, gpg_losses, kurtosis, skewness, wdr_loss
from .network import ForwardContext, Supernet
from .space import SubnetSpec, sample_subnet

GUIDANCE_MODES = ("gpg", "hard", "label_smoothing")


@dataclass
class TrainConfig:
    epochs: int = 120
    batch_size: int = 64
    lr: float = 0.001
    weight_decay: float = 0.0
    lam: float = 0.5
    wdr_weight: float = 0.01
    kurtosis_target: float = 1.8
    n_random: int = 2
    guidance: str = "gpg"
    label_smoothing: float = 0.1

    def __post_init__(self):
        if self.guidance not in GUIDANCE_MODES:
            raise ContractError(f"guidance must be one of {GUIDANCE_MODES}")
        if not 0.0 <= self.lam <= 1.0:
            raise ContractError("lambda must lie in [0, 1]")
        if self.n_random < 0:
            raise ContractError("n_random must be >= 0")


def sandwich_specs(net: Supernet, n_random: int, rng) -> list[SubnetSpec]:
    """Highest, ``n_random`` random, lowest, in that order."""
    specs = [sample_subnet(net.space, net.n_layers, "highest", rng)]
    specs += [sample_subnet(net.space, net.n_layers, "random", rng) for _ in range(n_random)]
    specs.append(sample_subnet(net.space, net.n_layers, "lowest", rng))
    return specs


def subnet_losses(logits: list[Tensor], labels, cfg: TrainConfig) -> list[Tensor]:
    """Per-subnet losses for logits ordered as :func:`sandwich_specs`.

    Under ``gpg`` each random subnet distills from the highest one and the
    lowest distills from the last random subnet (the highest if none).
    """
    if cfg.guidance == "hard":
        return [dc.cross_entropy(z, labels) for z in logits]
    if cfg.guidance == "label_smoothing":
        return [dc.cross_entropy(z, labels, cfg.label_smoothing) for z in logits]
    high, rands, low = logits[0], logits[1:-1], logits[-1]
    losses = [dc.cross_entropy(high, labels)]
    lam = cfg.lam
    for r in rands:
        _, loss_r, _, _ = gpg_losses(GroupLogits(high, r, r, labels), lam)
        losses.append(loss_r)
    teacher = rands[-1] if rands else high
    _, _, loss_l, _ = gpg_losses(GroupLogits(high, teacher, low, labels), lam)
    losses.append(loss_l)
    return losses


def train_step(net: Supernet, optimizer, x, y, rng, cfg: TrainConfig, lr=None, specs=None) -> dict:
    """One sandwich-rule update; gradients of all sampled subnets are
    accumulated before the single optimizer step."""
    if specs is None:
        specs = sandwich_specs(net, cfg.n_random, rng)
    optimizer.zero_grad()
    xt = Tensor(x)
    logits = [net.forward(xt, s, ForwardContext(mode="train")) for s in specs]
    losses = subnet_losses(logits, y, cfg)
    total = losses[0]
    for l in losses[1:]:
        total = total + l
    task = float(total.data)
    wdr = 0.0
    if cfg.wdr_weight:
        reg = wdr_loss(net.weight_tensors(), cfg.kurtosis_target)
        wdr = float(reg.data)
        total = total + cfg.wdr_weight * reg
    dc.backward(total)
    optimizer.step(lr)
    net.project_qparams()
    out = {"loss": float(total.data), "task_loss": task, "wdr_loss": wdr}
    out["loss_high"] = float(losses[0].data)
    out["loss_low"] = float(losses[-1].data)
    if not math.isfinite(out["loss"]):
        raise FloatingPointError("non-finite training loss")
    return out


class Trainer:
    """Epoch loop with cosine decay; all randomness comes from ``rng``."""

    def __init__(self, net: Supernet, cfg: TrainConfig, rng: np.random.Generator):
        self.net = net
        self.cfg = cfg
        self.rng = rng
        self.optimizer = Adam(list(net.parameters()), lr=cfg.lr, weight_decay=cfg.weight_decay)
        self.epoch = 0
        self.step = 0

    def total_steps(self, n_train: int) -> int:
        return self.cfg.epochs * self.steps_per_epoch(n_train)

    def steps_per_epoch(self, n_train: int) -> int:
        return max(1, n_train // self.cfg.batch_size)

    def run_epoch(self, x, y) -> dict:
        n = len(x)
        per_epoch = self.steps_per_epoch(n)
        total = self.total_steps(n)
        order = self.rng.permutation(n)
        sums = {}
        bs = self.cfg.batch_size
        for b in range(per_epoch):
            idx = order[b * bs:(b + 1) * bs]
            lr = cosine_lr(self.step, total, self.cfg.lr)
            rec = train_step(self.net, self.optimizer, x[idx], y[idx], self.rng, self.cfg, lr)
            self.step += 1
            for k, v in rec.items():
                sums[k] = sums.get(k, 0.0) + v
        self.epoch += 1
        return {k: v / per_epoch for k, v in sums.items()}

    def fit(self, x, y, until_epoch=None, on_epoch=None):
        until = self.cfg.epochs if until_epoch is None else min(until_epoch, self.cfg.epochs)
        while self.epoch < until:
            rec = self.run_epoch(x, y)
            if on_epoch is not None:
                on_epoch(self.epoch, rec)
        return self


def weight_moments(net: Supernet):
    """(skewness, kurtosis) of every quantized layer's shared weights."""
    out = []
    for w in net.weight_tensors():
        with dc.no_grad():
            out.append((float(skewness(w).data), float(kurtosis(w).data)))
    return out
