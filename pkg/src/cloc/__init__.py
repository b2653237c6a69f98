"""Ordinal classification with learnable cumulative inter-rank margins."""

__version__ = "0.1.0"

from .datagen import BiasSpec, Dataset, SyntheticSpec, generate, inject_bias, load_csv, save_csv, train_test
from .estimator import CLOCClassifier
from .losses import batch_objective, mmnp_loss
from .margins import MarginSet, OrdinalSchema, cumulative_margin, init_margins
from .metrics import EvalReport, evaluate, margin_report, ordering_score
from .model import Model, load_checkpoint, save_checkpoint
from .sampler import BatchSpec, build_batches
from .trainer import TrainConfig, TrainResult, train_cloc

__all__ = [
    "BatchSpec", "BiasSpec", "CLOCClassifier", "Dataset", "EvalReport", "MarginSet", "Model",
    "OrdinalSchema", "SyntheticSpec", "TrainConfig", "TrainResult", "batch_objective", "build_batches",
    "cumulative_margin", "evaluate", "generate", "init_margins", "inject_bias", "load_checkpoint",
    "load_csv", "margin_report", "mmnp_loss", "ordering_score", "save_checkpoint", "save_csv",
    "train_cloc", "train_test",
]
