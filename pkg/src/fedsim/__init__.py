"""Deterministic federated-learning simulator with multi-criteria client
selection, FedProx-regularized local training, and baseline selectors."""

from .backend import BACKEND
from .baselines import BaselineConfig
from .data import ClientShard, Dataset, dirichlet_partition, generate_synthetic
from .engine import (
    DatasetSpec,
    ExperimentConfig,
    ExperimentResult,
    RoundRecord,
    run_experiment,
)
from .errors import ConfigError, DivergenceError, DomainError, FedSimError
from .metrics import ExperimentSummary, summarize
from .model import ModelParams, TrainConfig
from .scoring import ClientMetadata, ScoreComponents, SelectorConfig

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BaselineConfig",
    "ClientMetadata",
    "ClientShard",
    "ConfigError",
    "Dataset",
    "DatasetSpec",
    "DivergenceError",
    "DomainError",
    "ExperimentConfig",
    "ExperimentResult",
    "ExperimentSummary",
    "FedSimError",
    "ModelParams",
    "RoundRecord",
    "ScoreComponents",
    "SelectorConfig",
    "TrainConfig",
    "dirichlet_partition",
    "generate_synthetic",
    "run_experiment",
    "summarize",
    "__version__",
]
