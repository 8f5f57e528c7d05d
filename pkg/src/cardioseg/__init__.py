"""Heart MRI segmentation with encoder-decoder fully convolutional networks.

Numpy-only implementation of 2.5D multi-channel and single-channel
segmentation models, their training loop, and the evaluation metrics,
plus the volume file formats and CLI that tie them together.
"""

from .data import SliceDataset, Volume, gen_synthetic, make_dataset_split
from .metrics import (
    ConfusionCounts,
    MetricVector,
    aggregate_stats,
    binarize,
    compute_metrics,
    confusion_counts,
    format_report,
)
from .model import Model, ModelConfig, build_model, load_checkpoint, save_checkpoint
from .tensor import Rng
from .training import Adam, TrainLog, cross_entropy_loss, evaluate_split, fit, train_epoch

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "ConfusionCounts",
    "MetricVector",
    "Model",
    "ModelConfig",
    "Rng",
    "SliceDataset",
    "TrainLog",
    "Volume",
    "aggregate_stats",
    "binarize",
    "build_model",
    "compute_metrics",
    "confusion_counts",
    "cross_entropy_loss",
    "evaluate_split",
    "fit",
    "format_report",
    "gen_synthetic",
    "load_checkpoint",
    "make_dataset_split",
    "save_checkpoint",
    "train_epoch",
    "__version__",
]
