"""
codelnet - Multi-scale CNN pipeline for 1p/19q codeletion classification.

Trains a small multi-branch convolutional network on paired post-contrast
T1 and T2 MR slices of low-grade gliomas, built on a numpy autodiff core.
Provides dataset splitting, preprocessing, augmentation, training,
evaluation, gradient checking and a synthetic phantom dataset.
"""

__version__ = "0.1.0"

from .config import RunConfig, ConfigError, get_config, set_config
from .hash import hash_file, verify_hash, parameter_checksum
from .tensor import (
    Tensor,
    Parameter,
    no_grad,
    conv2d,
    relu,
    maxpool2d,
    flatten,
    dense,
    concat,
    softmax,
    nll_loss,
    softmax_nll,
    DimensionError,
    NumericError,
    LabelError,
)
from .network import (
    Stage,
    BranchSpec,
    NetworkConfig,
    Network,
    Prediction,
    NetworkBuildError,
    build_network,
    forward,
    predict,
    desk_scale_config,
    paper_scale_config,
)
from .weights import save_weights, load_weights, WeightsFormatError, WeightsMismatchError
from .tensorfile import read_tensor_file, write_tensor_file, TensorFileError
from .gradcheck import gradcheck, run_suite, GradcheckReport
from .optim import TrainConfig, OptimizerState, optimizer_step, lr_schedule, early_stop
from .dataset import (
    SliceRecord,
    Manifest,
    SplitSpec,
    DatasetSplit,
    parse_manifest,
    write_manifest,
    split_dataset,
    balanced_sample,
    ManifestError,
    SplitError,
    SamplingError,
)
from .preprocess import SliceSample, zscore, dilate_mask, mask_and_embed, preprocess_record
from .augment import AugmentParams, AugmentDraw, augment_sample, build_epoch_training_set
from .metrics import ConfusionMatrix, confusion, sensitivity, specificity, accuracy
from .train import train_loop, evaluate_samples, TrainResult, EpochLog, DivergenceError
from .phantom import PhantomConfig, generate_phantom

__all__ = [
    # Version
    "__version__",
    # Config
    "RunConfig",
    "ConfigError",
    "get_config",
    "set_config",
    # Hash
    "hash_file",
    "verify_hash",
    "parameter_checksum",
    # Tensor
    "Tensor",
    "Parameter",
    "no_grad",
    "conv2d",
    "relu",
    "maxpool2d",
    "flatten",
    "dense",
    "concat",
    "softmax",
    "nll_loss",
    "softmax_nll",
    "DimensionError",
    "NumericError",
    "LabelError",
    # Network
    "Stage",
    "BranchSpec",
    "NetworkConfig",
    "Network",
    "Prediction",
    "NetworkBuildError",
    "build_network",
    "forward",
    "predict",
    "desk_scale_config",
    "paper_scale_config",
    # Serialization
    "save_weights",
    "load_weights",
    "WeightsFormatError",
    "WeightsMismatchError",
    "read_tensor_file",
    "write_tensor_file",
    "TensorFileError",
    # Gradient check
    "gradcheck",
    "run_suite",
    "GradcheckReport",
    # Optimization
    "TrainConfig",
    "OptimizerState",
    "optimizer_step",
    "lr_schedule",
    "early_stop",
    # Dataset
    "SliceRecord",
    "Manifest",
    "SplitSpec",
    "DatasetSplit",
    "parse_manifest",
    "write_manifest",
    "split_dataset",
    "balanced_sample",
    "ManifestError",
    "SplitError",
    "SamplingError",
    # Preprocess
    "SliceSample",
    "zscore",
    "dilate_mask",
    "mask_and_embed",
    "preprocess_record",
    # Augment
    "AugmentParams",
    "AugmentDraw",
    "augment_sample",
    "build_epoch_training_set",
    # Metrics
    "ConfusionMatrix",
    "confusion",
    "sensitivity",
    "specificity",
    "accuracy",
    # Training
    "train_loop",
    "evaluate_samples",
    "TrainResult",
    "EpochLog",
    "DivergenceError",
    # Phantom
    "PhantomConfig",
    "generate_phantom",
]
