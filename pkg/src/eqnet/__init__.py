"""Elastic quantization supernets: one set of shared weights, many
bit-width / symmetry / granularity configurations."""

from . import diffcore, kernels
from .calibration import CalibrationConfig, bn_calibrate, evaluate
from .errors import *  # noqa: F401,F403
from .predictor import CQAPModel, PredictorConfig, decode, encode, rank_metrics, train_predictor
from .quantizer import (
    Granularity,
    QuantParams,
    QuantSpec,
    Symmetry,
    dequantize,
    fake_quantize,
    init_params,
    integer_product,
    quantize,
)
from .search import GAConfig, Genome, SearchConstraint, avg_bitwidth, run_ga
from .supernet import (
    ElasticSpace,
    SubnetSpec,
    Supernet,
    TrainConfig,
    Trainer,
    build_supernet,
    parse_subnet,
    sample_subnet,
)

__version__ = "0.1.0"
