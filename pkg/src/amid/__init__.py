"""Cross-modal distillation with a class-aware contrastive MI objective,
an auxiliary-anchored teacher and adversarial alignment, on numpy."""

from .config import AmidConfig, load_config
from .errors import AmidError, ConfigurationError, DataError, NumericalError, UsageError
from .trainer import TrainResult, Trainer, run_ablation_suite, train

__all__ = ["AmidConfig", "load_config", "train", "Trainer", "TrainResult", "run_ablation_suite",
           "AmidError", "ConfigurationError", "DataError", "NumericalError", "UsageError"]
__version__ = "0.1.0"
