"""Binary-weight convolutional network engine.

Weights of binarized layers are constrained to one sign bit each plus a
single real scale per filter; training keeps full-precision shadow weights
and pushes gradients through the binarized weights with a clipped
straight-through estimator.  Inference convolutions run on packed sign
bits with additions and subtractions only.
"""

from .binarize import (
    BinaryFilterBank,
    binarize_filter,
    brute_force_optimum,
    optimal_scale,
    reconstruction_error,
    sign_binarize,
    stochastic_binarize,
)
from .errors import (
    BwnError,
    ConfigError,
    DataError,
    DomainError,
    FormatError,
    NumericsError,
    ShapeError,
)
from .estimator import BinaryWeightNetClassifier
from .layers import (
    MODE_BINARY,
    MODE_TRAIN_FULLPREC,
    LayerSpec,
    NetworkSpec,
    binarize_network,
    binary_conv2d_forward,
    build_micro_resnet,
    expand,
    forward_network,
    init_params,
)
from .metrics import EvalReport, Trial, compute_eer, compute_min_dcf, cosine_score, evaluate
from .model_io import load_model, pack_weights, save_model, size_report, unpack_weights
from .synthdata import SyntheticSpeakerConfig, generate_dataset
from .training import (
    TrainConfig,
    TrainState,
    cross_entropy_loss,
    lr_schedule,
    sgd_momentum_step,
    ste_gradient,
    train_epoch,
    train_network,
)

__version__ = "0.1.0"

__all__ = [
    "BinaryFilterBank",
    "BinaryWeightNetClassifier",
    "BwnError",
    "ConfigError",
    "DataError",
    "DomainError",
    "EvalReport",
    "FormatError",
    "LayerSpec",
    "MODE_BINARY",
    "MODE_TRAIN_FULLPREC",
    "NetworkSpec",
    "NumericsError",
    "ShapeError",
    "SyntheticSpeakerConfig",
    "Trial",
    "TrainConfig",
    "TrainState",
    "binarize_filter",
    "binarize_network",
    "binary_conv2d_forward",
    "brute_force_optimum",
    "build_micro_resnet",
    "compute_eer",
    "compute_min_dcf",
    "cosine_score",
    "cross_entropy_loss",
    "evaluate",
    "expand",
    "forward_network",
    "generate_dataset",
    "init_params",
    "load_model",
    "lr_schedule",
    "optimal_scale",
    "pack_weights",
    "reconstruction_error",
    "save_model",
    "sgd_momentum_step",
    "sign_binarize",
    "size_report",
    "ste_gradient",
    "stochastic_binarize",
    "train_epoch",
    "train_network",
    "unpack_weights",
]
