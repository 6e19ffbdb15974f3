"""Conditional quantization-aware accuracy predictor (CQAP).

Each layer is encoded as ``[one-hot(weight bits) | one-hot(act bits) |
G_w | S_w | S_a]`` where G_w = 1 for per-channel weights and S_* = 1 for
asymmetric quantization. Layer blocks are concatenated in network order.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import diffcore as dc
from .diffcore import SGD, Tensor
from .errors import ContractError, EncodingError, UndefinedMetricError
from .quantizer import Granularity, QuantSpec, Symmetry
from .supernet.space import ElasticSpace, LayerConfig, SubnetSpec


def block_width(space: ElasticSpace) -> int:
    return len(space.weight_bits) + len(space.act_bits) + 3


def encoding_width(space: ElasticSpace, n_layers: int) -> int:
    return n_layers * block_width(space)


def encoding_header(space: ElasticSpace, n_layers: int) -> list[str]:
    names = []
    for l in range(n_layers):
        names += [f"l{l}_wb{b}" for b in space.weight_bits]
        names += [f"l{l}_ab{b}" for b in space.act_bits]
        names += [f"l{l}_gw", f"l{l}_sw", f"l{l}_sa"]
    return names


def encode(spec: SubnetSpec, space: ElasticSpace) -> np.ndarray:
    nw = len(space.weight_bits)
    na = len(space.act_bits)
    width = block_width(space)
    out = np.zeros(len(spec) * width, dtype=np.uint8)
    for l, (w, a) in enumerate(spec):
        if not space.contains(LayerConfig(w, a)):
            raise EncodingError(f"layer {l} configuration is outside the elastic space")
        base = l * width
        out[base + space.weight_bits.index(w.bits)] = 1
        out[base + nw + space.act_bits.index(a.bits)] = 1
        out[base + nw + na] = w.per_channel
        out[base + nw + na + 1] = not w.symmetric
        out[base + nw + na + 2] = not a.symmetric
    return out


def decode(bits, space: ElasticSpace) -> SubnetSpec:
    bits = np.asarray(bits)
    nw = len(space.weight_bits)
    na = len(space.act_bits)
    width = block_width(space)
    if bits.ndim != 1 or bits.size % width:
        raise EncodingError(f"encoding length {bits.size} is not a multiple of {width}")
    layers = []
    for base in range(0, bits.size, width):
        blk = bits[base:base + width]
        wb, ab, flags = blk[:nw], blk[nw:nw + na], blk[nw + na:]
        if wb.sum() != 1 or ab.sum() != 1 or not np.isin(flags, (0, 1)).all():
            raise EncodingError("malformed layer block")
        w = QuantSpec(
            space.weight_bits[int(np.argmax(wb))],
            Symmetry.ASYMMETRIC if flags[1] else Symmetry.SYMMETRIC,
            Granularity.PER_CHANNEL if flags[0] else Granularity.PER_TENSOR,
        )
        a = QuantSpec(space.act_bits[int(np.argmax(ab))], Symmetry.ASYMMETRIC if flags[2] else Symmetry.SYMMETRIC)
        layers.append(LayerConfig(w, a))
    spec = SubnetSpec(tuple(layers))
    spec.check(space)
    return spec


@dataclass
class CQAPModel:
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    target_mean: float = 0.0
    target_std: float = 1.0

    def raw(self, x) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < len(self.weights) - 1:
                h = np.maximum(h, 0.0)
        return h[:, 0] * self.target_std + self.target_mean

    def predict_encoded(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.clip(self.raw(x), 0.0, 1.0)

    def predict(self, spec: SubnetSpec, space: ElasticSpace) -> float:
        return float(self.predict_encoded(encode(spec, space)[None, :])[0])

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"target": np.array([self.target_mean, self.target_std])}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "CQAPModel":
        n = sum(1 for k in arrays if k.startswith("w"))
        mean, std = arrays["target"]
        return cls(
            [np.array(arrays[f"w{i}"]) for i in range(n)],
            [np.array(arrays[f"b{i}"]) for i in range(n)],
            float(mean),
            float(std),
        )


@dataclass
class PredictorConfig:
    hidden: tuple = (128, 128)
    epochs: int = 100
    lr: float = 0.0004
    weight_decay: float = 0.0001
    momentum: float = 0.9
    batch_size: int = 1
    seed: int = 0


def train_predictor(encodings, accuracies, cfg: PredictorConfig | None = None) -> CQAPModel:
    """Fit an MLP regressor with mean-squared error and SGD.

    Targets are standardized before fitting; batches follow a per-epoch
    permutation drawn from ``cfg.seed``.
    """
    cfg = PredictorConfig() if cfg is None else cfg
    x = np.asarray(encodings, dtype=np.float64)
    y = np.asarray(accuracies, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y) or len(y) < 2:
        raise ContractError("need at least two (encoding, accuracy) samples")
    mean = float(y.mean())
    std = float(y.std())
    if std == 0.0:
        warnings.warn("all target accuracies are identical; the fit is degenerate", RuntimeWarning, stacklevel=2)
        std = 1.0
    t = (y - mean) / std
    rng = np.random.default_rng(cfg.seed)
    sizes = [x.shape[1], *cfg.hidden, 1]
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        params.append(Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out)), requires_grad=True))
        params.append(Tensor(np.zeros(fan_out), requires_grad=True))
    opt = SGD(params, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    n = len(y)
    bs = max(1, min(cfg.batch_size, n))
    n_layers = len(sizes) - 1
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            h = Tensor(x[idx])
            for i in range(n_layers):
                h = h @ params[2 * i] + params[2 * i + 1]
                if i < n_layers - 1:
                    h = dc.relu(h)
            err = h.reshape(-1) - t[idx]
            loss = (err * err).mean()
            opt.zero_grad()
            dc.backward(loss)
            opt.step()
    return CQAPModel(
        [params[2 * i].data.copy() for i in range(n_layers)],
        [params[2 * i + 1].data.copy() for i in range(n_layers)],
        mean,
        std,
    )


def rank_metrics(pred, actual) -> tuple[float, float]:
    """(Pearson r, Kendall tau-b)."""
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape or pred.ndim != 1 or pred.size < 2:
        raise ContractError("need two equal-length vectors of length >= 2")
    if np.ptp(pred) == 0 or np.ptp(actual) == 0:
        raise UndefinedMetricError("correlation is undefined for a constant vector")
    pearson = float(stats.pearsonr(pred, actual)[0])
    kendall = float(stats.kendalltau(pred, actual, variant="b")[0])
    return pearson, kendall


def write_samples_csv(path, space: ElasticSpace, n_layers: int, encodings, accuracies) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(encoding_header(space, n_layers) + ["accuracy"])
        for enc, acc in zip(encodings, accuracies):
            w.writerow([int(b) for b in enc] + [repr(float(acc))])


def read_samples_csv(path, space: ElasticSpace, n_layers: int):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise EncodingError(f"{path}: empty sample file")
    header = encoding_header(space, n_layers) + ["accuracy"]
    if rows[0] != header:
        raise EncodingError(f"{path}: header does not match the elastic space")
    enc = np.array([[int(v) for v in r[:-1]] for r in rows[1:]], dtype=np.uint8).reshape(-1, len(header) - 1)
    acc = np.array([float(r[-1]) for r in rows[1:]])
    return enc, acc
