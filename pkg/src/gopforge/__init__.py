"""Progressive construction of Generalized Operational Perceptron networks."""
from .data import Dataset, load_csv, make_synthetic, split_dataset, standardize
from .model import NetworkModel, load_model, save_model
from .operators import OperatorSet, enumerate_library
from .progressive import (
    NetworkTemplate, ProgressionData, ProgressiveConfig, StoppingRule, progress, template_from_model,
)
from .training import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "Dataset", "NetworkModel", "NetworkTemplate", "OperatorSet", "ProgressionData", "ProgressiveConfig",
    "StoppingRule", "TrainConfig", "enumerate_library", "load_csv", "load_model", "make_synthetic",
    "progress", "save_model", "split_dataset", "standardize", "template_from_model",
]
