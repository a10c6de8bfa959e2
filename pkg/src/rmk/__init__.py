"""Multi-structure commonsense reasoning for visual dialog, on a small
numpy autodiff core."""
from .config import RunConfig, load_config, parse_config, serialize_config
from .data import DialogInstance, ImageFeatures, Round, load_dataset, save_dataset
from .knowledge import FactTriple, load_triple_store, retrieve_candidates
from .metrics import MetricsReport, compute_metrics
from .model import Featurizer, KnowledgeBase, ModelConfig, RMKModel, collate
from .synthetic import VocabSpec, generate_synthetic_dataset
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "DialogInstance",
    "FactTriple",
    "Featurizer",
    "ImageFeatures",
    "KnowledgeBase",
    "MetricsReport",
    "ModelConfig",
    "RMKModel",
    "Round",
    "RunConfig",
    "TrainConfig",
    "VocabSpec",
    "collate",
    "compute_metrics",
    "evaluate",
    "generate_synthetic_dataset",
    "load_config",
    "load_dataset",
    "load_triple_store",
    "parse_config",
    "retrieve_candidates",
    "save_dataset",
    "serialize_config",
    "train",
]
