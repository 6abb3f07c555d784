"""Multi-view report generation with contrastive decoder alignment and
adaptive view routing."""

from .config import TrainConfig, make_config
from .data import Case, Vocabulary, generate_synthetic_dataset, split_dataset
from .metrics import MetricReport, evaluate_corpus, mixed_reward
from .model import ReportModel
from .training import Trainer

__version__ = "0.1.0"

__all__ = [
    "Case",
    "MetricReport",
    "ReportModel",
    "TrainConfig",
    "Trainer",
    "Vocabulary",
    "evaluate_corpus",
    "generate_synthetic_dataset",
    "make_config",
    "mixed_reward",
    "split_dataset",
    "__version__",
]
