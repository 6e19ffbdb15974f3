"""Weight-sharing elastic quantization supernet."""

from .losses import GroupLogits, gpg_losses, kurtosis, skewness, wdr_loss
from .network import (
    ARCHITECTURES,
    BatchNorm,
    ElasticLayer,
    ForwardContext,
    Supernet,
    build_supernet,
    forward_subnet,
)
from .space import ElasticSpace, LayerConfig, SubnetSpec, parse_subnet, sample_subnet
from .training import TrainConfig, Trainer, sandwich_specs, subnet_losses, train_step, weight_moments

__all__ = [
    "ARCHITECTURES",
    "BatchNorm",
    "ElasticLayer",
    "ElasticSpace",
    "ForwardContext",
    "GroupLogits",
    "LayerConfig",
    "SubnetSpec",
    "Supernet",
    "TrainConfig",
    "Trainer",
    "build_supernet",
    "forward_subnet",
    "gpg_losses",
    "kurtosis",
    "parse_subnet",
    "sample_subnet",
    "sandwich_specs",
    "skewness",
    "subnet_losses",
    "train_step",
    "wdr_loss",
    "weight_moments",
]
