"""Elastic space, per-layer configurations and subnet sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..errors import EmptySpaceError, InvalidSpecError, LookupSpecError
from ..quantizer import (
    Granularity,
    QuantSpec,
    Symmetry,
    parse_granularity,
    parse_symmetry,
)


@dataclass(frozen=True)
class ElasticSpace:
    weight_bits: tuple[int, ...]
    act_bits: tuple[int, ...]
    symmetries: tuple[Symmetry, ...] = (Symmetry.SYMMETRIC, Symmetry.ASYMMETRIC)
    granularities: tuple[Granularity, ...] = (Granularity.PER_TENSOR, Granularity.PER_CHANNEL)

    def __post_init__(self):
        wb = tuple(sorted({int(b) for b in self.weight_bits}))
        ab = tuple(sorted({int(b) for b in self.act_bits}))
        sy = tuple(sorted({parse_symmetry(s) for s in self.symmetries}, key=lambda s: s.value != "symmetric"))
        gr = tuple(sorted({parse_granularity(g) for g in self.granularities}, key=lambda g: g.value != "per_tensor"))
        if not wb or not ab:
            raise EmptySpaceError("bit-width sets must be non-empty")
        if not sy or not gr:
            raise EmptySpaceError("symmetry and granularity sets must be non-empty")
        if min(wb + ab) < 2:
            raise InvalidSpecError("bit-widths must be >= 2")
        object.__setattr__(self, "weight_bits", wb)
        object.__setattr__(self, "act_bits", ab)
        object.__setattr__(self, "symmetries", sy)
        object.__setattr__(self, "granularities", gr)

    def weight_specs(self) -> list[QuantSpec]:
        return [QuantSpec(b, s, g) for b in self.weight_bits for s in self.symmetries for g in self.granularities]

    def act_specs(self) -> list[QuantSpec]:
        return [QuantSpec(b, s, Granularity.PER_TENSOR) for b in self.act_bits for s in self.symmetries]

    def contains(self, layer: "LayerConfig") -> bool:
        w, a = layer
        return (
            w.bits in self.weight_bits
            and w.symmetry in self.symmetries
            and w.granularity in self.granularities
            and a.bits in self.act_bits
            and a.symmetry in self.symmetries
            and a.granularity is Granularity.PER_TENSOR
        )

    def describe(self) -> dict:
        return {
            "weight_bits": list(self.weight_bits),
            "act_bits": list(self.act_bits),
            "symmetries": [s.value for s in self.symmetries],
            "granularities": [g.value for g in self.granularities],
        }


class LayerConfig(NamedTuple):
    weight: QuantSpec
    act: QuantSpec


@dataclass(frozen=True)
class SubnetSpec:
    """Per-layer (weight, activation) quantization configuration."""

    layers: tuple[LayerConfig, ...]

    def __post_init__(self):
        layers = tuple(LayerConfig(*cfg) for cfg in self.layers)
        for cfg in layers:
            if cfg.act.per_channel:
                raise InvalidSpecError("activations are always quantized per tensor")
        object.__setattr__(self, "layers", layers)

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    @classmethod
    def uniform(cls, n_layers, wbits, abits=None, symmetry="symmetric", granularity="per_tensor", act_symmetry=None):
        abits = wbits if abits is None else abits
        act_symmetry = symmetry if act_symmetry is None else act_symmetry
        cfg = LayerConfig(QuantSpec(wbits, symmetry, granularity), QuantSpec(abits, act_symmetry, "per_tensor"))
        return cls((cfg,) * n_layers)

    def weight_bits(self) -> np.ndarray:
        return np.array([c.weight.bits for c in self.layers])

    def act_bits(self) -> np.ndarray:
        return np.array([c.act.bits for c in self.layers])

    def check(self, space: ElasticSpace, n_layers: int | None = None) -> None:
        if n_layers is not None and len(self.layers) != n_layers:
            raise LookupSpecError(f"spec has {len(self.layers)} layers, network has {n_layers}")
        for i, cfg in enumerate(self.layers):
            if not space.contains(cfg):
                raise LookupSpecError(f"layer {i} configuration {format_layer(cfg)} is outside the elastic space")

    def to_string(self) -> str:
        return "|".join(format_layer(c) for c in self.layers)


def format_layer(cfg: LayerConfig) -> str:
    return f"{cfg.weight}/{cfg.act.bits},{'sym' if cfg.act.symmetric else 'asym'}"


def _parse_layer(text: str) -> LayerConfig:
    parts = text.split("/")
    if len(parts) > 2:
        raise InvalidSpecError(f"bad layer spec {text!r}")
    w = [t.strip() for t in parts[0].split(",")]
    if len(w) != 3:
        raise InvalidSpecError(f"weight spec {parts[0]!r} needs bits,symmetry,granularity")
    try:
        wbits = int(w[0])
    except ValueError:
        raise InvalidSpecError(f"bad bit-width {w[0]!r}") from None
    wspec = QuantSpec(wbits, w[1], w[2])
    if len(parts) == 1:
        return LayerConfig(wspec, QuantSpec(wbits, w[1], "per_tensor"))
    a = [t.strip() for t in parts[1].split(",")]
    if len(a) not in (1, 2):
        raise InvalidSpecError(f"activation spec {parts[1]!r} needs bits[,symmetry]")
    try:
        abits = int(a[0])
    except ValueError:
        raise InvalidSpecError(f"bad bit-width {a[0]!r}") from None
    return LayerConfig(wspec, QuantSpec(abits, a[1] if len(a) == 2 else w[1], "per_tensor"))


def parse_subnet(text: str, n_layers: int) -> SubnetSpec:
    """Parse a subnet string.

    Either ``all:<layer>`` or ``<layer>|<layer>|...`` with one entry per
    quantized layer, where ``<layer>`` is ``bits,sym,gran[/abits[,asym]]``.
    Activation settings default to the weight bits and symmetry.
    """
    text = text.strip()
    if not text:
        raise InvalidSpecError("empty subnet spec")
    if text.startswith("all:"):
        return SubnetSpec((_parse_layer(text[4:]),) * n_layers)
    layers = tuple(_parse_layer(t) for t in text.split("|"))
    if len(layers) != n_layers:
        raise InvalidSpecError(f"spec lists {len(layers)} layers, network has {n_layers}")
    return SubnetSpec(layers)


def _choice(rng, items):
    return items[int(rng.integers(len(items)))]


def sample_subnet(space: ElasticSpace, n_layers: int, rule: str, rng: np.random.Generator) -> SubnetSpec:
    """Sandwich-rule sampling.

    ``highest``/``lowest`` fix every bit-width at the extreme of the space and
    draw symmetry and granularity uniformly per layer; ``random`` draws every
    axis uniformly per layer.
    """
    if rule not in ("highest", "lowest", "random"):
        raise ValueError(f"unknown sampling rule {rule!r}")
    layers = []
    for _ in range(n_layers):
        if rule == "highest":
            wb, ab = space.weight_bits[-1], space.act_bits[-1]
        elif rule == "lowest":
            wb, ab = space.weight_bits[0], space.act_bits[0]
        else:
            wb = _choice(rng, space.weight_bits)
            ab = _choice(rng, space.act_bits)
        ws = _choice(rng, space.symmetries)
        wg = _choice(rng, space.granularities)
        asym = _choice(rng, space.symmetries)
        layers.append(LayerConfig(QuantSpec(wb, ws, wg), QuantSpec(ab, asym, Granularity.PER_TENSOR)))
    return SubnetSpec(tuple(layers))
