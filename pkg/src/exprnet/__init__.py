"""A small numpy deep-learning framework for two-class facial-expression
recognition: the two-stage CNN with optional batch-norm, dropout and
SE/CBAM attention, its augmentation pipeline, training recipe, experiment
matrix and Grad-CAM."""

from .augment import AugmentConfig, apply_pipeline
from .data import Dataset, LabeledImage, batch_iter, load_dataset, stratified_split, synth_toy
from .errors import ConfigError, ContractError, DivergenceError, FormatError, UnsupportedError
from .metrics import ConfusionMatrix, report_table, summarize
from .model import (ExpressionNet, ModelConfig, build_model, experiment_configs, forward_logits,
                    grad_cam)
from .rng import Rng, substream
from .train import TrainConfig, lr_at, run_experiments, train_run

__all__ = [
    "AugmentConfig", "ConfigError", "ConfusionMatrix", "ContractError", "Dataset",
    "DivergenceError", "ExpressionNet", "FormatError", "LabeledImage", "ModelConfig", "Rng",
    "TrainConfig", "UnsupportedError", "apply_pipeline", "batch_iter", "build_model",
    "experiment_configs", "forward_logits", "grad_cam", "load_dataset", "lr_at", "report_table",
    "run_experiments", "stratified_split", "substream", "summarize", "synth_toy", "train_run",
]

__version__ = "0.1.0"
