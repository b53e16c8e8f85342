"""Directed dynamic connectivity from multivariate time series.

A bidirectional LSTM embeds every component, self-attention turns the
embeddings into one row-stochastic directed graph per timepoint, a global
temporal attention pools those graphs into a final graph, and a small MLP
classifies from the final graph alone.
"""

from .data import Dataset, Sample, load_dataset, save_dataset, split_folds
from .errors import DecenntError, UsageError, ValidationError
from .model import ModelConfig, ModelParams, forward, loss
from .training import TrainConfig, cross_validate, fit

__version__ = "0.1.0"

__all__ = [
    "Dataset", "Sample", "load_dataset", "save_dataset", "split_folds",
    "DecenntError", "UsageError", "ValidationError",
    "ModelConfig", "ModelParams", "forward", "loss",
    "TrainConfig", "cross_validate", "fit",
]
