"""Flat ``section.key = value`` experiment configuration.

Blank lines and lines starting with ``#`` are ignored. Every key must be
known; list values are comma separated. Example::

    run.dir = runs/toy
    arch.name = toy_mlp
    space.weight_bits = 2, 3, 4, 6, 8
    train.epochs = 20
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

from ..errors import ConfigError


def _ints(v):
    return tuple(int(x) for x in _strs(v))


def _floats(v):
    return tuple(float(x) for x in _strs(v))


def _strs(v):
    return tuple(x.strip() for x in v.split(",") if x.strip())


def _bool(v):
    low = v.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


@dataclass
class RunSection:
    dir: str = "runs/default"


@dataclass
class DataSection:
    kind: str = "blobs"
    n_samples: int = 10000
    n_classes: int = 10
    dims: int = 64
    separation: float = 0.5
    noise: float = 1.0
    clusters_per_class: int = 2
    seed: int = 0
    path: str = ""
    labels: str = ""
    split: tuple = (0.8, 0.1, 0.1)


@dataclass
class ArchSection:
    name: str = "toy_mlp"
    layers: tuple = ()
    input_shape: tuple = ()
    quantize_first_last: bool = True


@dataclass
class SpaceSection:
    weight_bits: tuple = (2, 3, 4, 6, 8)
    act_bits: tuple = (2, 3, 4, 6, 8)
    symmetries: tuple = ("symmetric", "asymmetric")
    granularities: tuple = ("per_tensor", "per_channel")
    per_tensor_mode: str = "learned"


@dataclass
class TrainSection:
    epochs: int = 120
    batch_size: int = 128
    lr: float = 0.001
    weight_decay: float = 0.0
    lam: float = 0.5
    wdr_weight: float = 0.01
    kurtosis_target: float = 1.8
    n_random: int = 2
    guidance: str = "gpg"
    label_smoothing: float = 0.1
    seed: int = 0
    checkpoint_every: int = 0


@dataclass
class CalibSection:
    n_batches: int = 20
    batch_size: int = 64


@dataclass
class PredictorSection:
    n_samples: int = 600
    holdout: int = 100
    hidden: tuple = (128, 128)
    epochs: int = 100
    lr: float = 0.0004
    weight_decay: float = 0.0001
    momentum: float = 0.9
    batch_size: int = 1


@dataclass
class SearchSection:
    population: int = 100
    generations: int = 500
    mutation_prob: float = 0.1
    crossover_prob: float = 0.9
    elite_count: int = 1
    tolerance: float = 0.25
    weighting: str = "weighted"
    pareto_targets: tuple = (2.5, 3.0, 4.0, 5.0, 6.0)


@dataclass
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    arch: ArchSection = field(default_factory=ArchSection)
    space: SpaceSection = field(default_factory=SpaceSection)
    train: TrainSection = field(default_factory=TrainSection)
    calib: CalibSection = field(default_factory=CalibSection)
    predictor: PredictorSection = field(default_factory=PredictorSection)
    search: SearchSection = field(default_factory=SearchSection)
    source: str = ""

    @property
    def seed(self) -> int:
        return self.train.seed

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, train=replace(self.train, seed=int(seed)))


_TUPLE_PARSERS = {
    ("data", "split"): _floats,
    ("arch", "layers"): _strs,
    ("arch", "input_shape"): _ints,
    ("space", "weight_bits"): _ints,
    ("space", "act_bits"): _ints,
    ("space", "symmetries"): _strs,
    ("space", "granularities"): _strs,
    ("predictor", "hidden"): _ints,
    ("search", "pareto_targets"): _floats,
}
_CHOICES = {
    ("data", "kind"): ("blobs", "eqds"),
    ("space", "per_tensor_mode"): ("learned", "min", "mean", "max"),
    ("train", "guidance"): ("gpg", "hard", "label_smoothing"),
    ("search", "weighting"): ("weighted", "unweighted"),
}


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    sections = {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.name != "source"}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'section.key = value', got {raw!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"key {key!r} lacks a section prefix", lineno)
        sec_name, name = key.split(".", 1)
        if sec_name not in sections:
            raise ConfigError(f"unknown section {sec_name!r}", lineno)
        section = sections[sec_name]
        known = {f.name: f for f in fields(section)}
        if name not in known:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        seen.add(key)
        default = getattr(section, name)
        try:
            if (sec_name, name) in _TUPLE_PARSERS:
                parsed = _TUPLE_PARSERS[(sec_name, name)](value)
            elif isinstance(default, bool):
                parsed = _bool(value)
            elif isinstance(default, int):
                parsed = int(value)
            elif isinstance(default, float):
                parsed = float(value)
            else:
                parsed = value
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from None
        choices = _CHOICES.get((sec_name, name))
        if choices is not None and parsed not in choices:
            raise ConfigError(f"{key!r} must be one of {choices}", lineno)
        setattr(section, name, parsed)
    cfg.source = text
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    if not cfg.space.weight_bits or not cfg.space.act_bits:
        raise ConfigError("bit-width sets must be non-empty")
    if cfg.data.kind == "eqds" and not (cfg.data.path and cfg.data.labels):
        raise ConfigError("data.kind = eqds needs data.path and data.labels")
    if cfg.arch.layers and not cfg.arch.input_shape:
        raise ConfigError("explicit arch.layers need arch.input_shape")
    if len(cfg.data.split) != 3:
        raise ConfigError("data.split needs train, val and calibration fractions")


def load_config(path, base_dir=None) -> ExperimentConfig:
    with open(path) as f:
        text = f.read()
    cfg = parse_config(text, str(path))
    env_seed = os.environ.get("EQNET_SEED")
    if env_seed:
        try:
            cfg = cfg.with_seed(int(env_seed))
        except ValueError:
            raise ConfigError(f"EQNET_SEED must be an integer, got {env_seed!r}") from None
    return cfg


def format_config(cfg: ExperimentConfig) -> str:
    """Serialize back to the key-value format (round-trips via parse_config)."""
    lines = []
    for sec in fields(cfg):
        if sec.name == "source":
            continue
        section = getattr(cfg, sec.name)
        for f in fields(section):
            v = getattr(section, f.name)
            if isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{sec.name}.{f.name} = {v}")
    return "\n".join(lines) + "\n"
