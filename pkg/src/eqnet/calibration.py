"""Batch-norm recalibration and accuracy evaluation for a single subnet."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ContractError, InputError
from .supernet.network import ForwardContext, Supernet
from .supernet.space import SubnetSpec


@dataclass
class CalibrationConfig:
    n_batches: int = 20
    batch_size: int = 64
    split: str = "calibration"

    def __post_init__(self):
        if self.n_batches < 1 or self.batch_size < 1:
            raise ContractError("n_batches and batch_size must be >= 1")


@dataclass
class CalibratedSubnet:
    """A subnet together with batch-norm statistics recomputed for it."""

    net: Supernet
    spec: SubnetSpec
    stats: list

    def logits(self, x, batch_size=512) -> np.ndarray:
        out = []
        with dc.no_grad():
            for i in range(0, len(x), batch_size):
                ctx = ForwardContext(mode="eval", stats=self.stats)
                out.append(self.net.forward(x[i:i + batch_size], self.spec, ctx).data)
        return np.concatenate(out)


def bn_calibrate(net: Supernet, spec: SubnetSpec, x, cfg: CalibrationConfig | None = None) -> CalibratedSubnet:
    """Recompute every BN layer's statistics from forward passes under ``spec``.

    Batches are taken in order from ``x`` (wrapping around). The result is
    the population mean/variance over all calibration samples seen by each
    layer; network weights and quantization parameters are not touched.
    """
    cfg = CalibrationConfig() if cfg is None else cfg
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        raise InputError("calibration data is empty")
    n_bn = len(net.batchnorms)
    sums = [None] * n_bn
    sq = [None] * n_bn
    count = 0
    with dc.no_grad():
        for b in range(cfg.n_batches):
            idx = (np.arange(cfg.batch_size) + b * cfg.batch_size) % len(x)
            ctx = ForwardContext(mode="calibrate")
            net.forward(x[idx], spec, ctx)
            for i, mu, var in ctx.collected:
                m2 = var + mu * mu
                sums[i] = mu if sums[i] is None else sums[i] + mu
                sq[i] = m2 if sq[i] is None else sq[i] + m2
            count += 1
    stats = []
    for s, q in zip(sums, sq):
        mean = s / count
        stats.append((mean, np.maximum(q / count - mean * mean, 0.0)))
    return CalibratedSubnet(net, spec, stats)


def evaluate(target, spec: SubnetSpec | None, x, y, require_calibrated: bool = True, batch_size=512) -> float:
    """Top-1 accuracy in [0, 1].

    ``target`` is a :class:`CalibratedSubnet` (``spec`` may then be None) or
    a bare :class:`Supernet`; the latter uses its running statistics and is
    only allowed with ``require_calibrated=False``.
    """
    y = np.asarray(y)
    if len(y) == 0:
        raise InputError("evaluation data is empty")
    if isinstance(target, CalibratedSubnet):
        if spec is not None and spec != target.spec:
            raise ContractError("spec differs from the calibrated subnet")
        logits = target.logits(x, batch_size)
    else:
        if require_calibrated and target.batchnorms:
            raise ContractError("subnet has not been batch-norm calibrated")
        out = []
        with dc.no_grad():
            for i in range(0, len(x), batch_size):
                out.append(target.forward(x[i:i + batch_size], spec, ForwardContext(mode="eval")).data)
        logits = np.concatenate(out)
    return accuracy(logits, y)


def accuracy(logits, y) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(y)))
