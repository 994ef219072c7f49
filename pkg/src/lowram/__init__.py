"""Memory-frugal online logistic regression with randomized-rounding coefficient storage."""

__version__ = "0.1.0"

from .data_io import SparseExample, SynthSpec, generate_synthetic, parse_libsvm, read_libsvm
from .errors import (
    ComparatorError,
    ConfigError,
    DomainError,
    FormatError,
    GridRangeError,
    LowRamError,
    ParameterError,
    ParseError,
    PrecisionError,
    UndefinedAUCError,
    VersionError,
)
from .evaluation import auc, progressive_validate
from .fixed_point import GridSpec, decode, encode, random_round, random_round_array
from .logistic import error_bounds, loss, predict
from .model_store import (
    ModelHistogram,
    PackedModel,
    load,
    memory_report,
    optimal_bits_per_value,
    quantize_for_prediction,
    save,
)
from .ogd_train import OGDTrainer, OneDimOGD, TrainConfig
from .prob_count import MorrisCounter, check_bounds

__all__ = [
    "ComparatorError", "ConfigError", "DomainError", "FormatError", "GridRangeError",
    "GridSpec", "LowRamError", "ModelHistogram", "MorrisCounter", "OGDTrainer", "OneDimOGD",
    "PackedModel", "ParameterError", "ParseError", "PrecisionError", "SparseExample",
    "SynthSpec", "TrainConfig", "UndefinedAUCError", "VersionError", "auc", "check_bounds",
    "decode", "encode", "error_bounds", "generate_synthetic", "load", "loss",
    "memory_report", "optimal_bits_per_value", "parse_libsvm", "predict",
    "progressive_validate", "quantize_for_prediction", "random_round", "random_round_array",
    "read_libsvm", "save",
]
