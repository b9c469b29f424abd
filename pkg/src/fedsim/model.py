"""Multinomial logistic regression with FedProx-regularized local SGD.

The model family is deliberately small: closed-form gradients make the
finite-difference oracle exact and keep client training cheap enough for
many-seed sweeps.  The selection machinery above it is model-agnostic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .data import ClientShard, Dataset
from .errors import ConfigError, DivergenceError, DomainError


@dataclass
class ModelParams:
    """Linear classifier parameters: one weight row and bias per class."""

    weights: np.ndarray  # (n_classes, n_features)
    bias: np.ndarray  # (n_classes,)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(self.weights.copy(), self.bias.copy())

    def allclose(self, other: "ModelParams", atol: float = 0.0) -> bool:
        return np.allclose(self.weights, other.weights, atol=atol) and np.allclose(
            self.bias, other.bias, atol=atol
        )


@dataclass
class TrainConfig:
    """Local training hyperparameters shared by every client."""

    local_epochs: int = 2
    learning_rate: float = 0.05
    proximal_mu: float = 0.1
    batch_size: int = 32

    def validate(self) -> None:
        if self.local_epochs < 1:
            raise ConfigError("local_epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.proximal_mu < 0:
            raise ConfigError("proximal_mu must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


def init_params(n_features: int, n_classes: int, seed) -> ModelParams:
    """Small uniform random weights in [-0.01, 0.01], zero bias."""
    if n_features < 1:
        raise ConfigError("n_features must be >= 1")
    if n_classes < 2:
        raise ConfigError("n_classes must be >= 2")
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-0.01, 0.01, size=(n_classes, n_features))
    return ModelParams(weights, np.zeros(n_classes))


def _gather(dataset: Dataset, indices) -> tuple[np.ndarray, np.ndarray]:
    if indices is None:
        return dataset.features, dataset.labels
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise DomainError("index set is empty")
    return dataset.features[indices], dataset.labels[indices]


def loss(params: ModelParams, dataset: Dataset, indices=None) -> float:
    """Mean cross-entropy over the indexed samples (all samples if None)."""
    x, y = _gather(dataset, indices)
    return backend.ce_loss(params.weights, params.bias, x, y)


def gradient(params: ModelParams, dataset: Dataset, indices=None) -> ModelParams:
    """Exact analytic gradient of ``loss``, in ModelParams shape."""
    x, y = _gather(dataset, indices)
    gw, gb = backend.ce_grad(params.weights, params.bias, x, y)
    return ModelParams(gw, gb)


def accuracy(params: ModelParams, dataset: Dataset, indices=None) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class."""
    x, y = _gather(dataset, indices)
    logits = x @ params.weights.T + params.bias
    return float(np.mean(np.argmax(logits, axis=1) == y))


def param_sq_distance(a: ModelParams, b: ModelParams) -> float:
    """Squared L2 distance over all parameters (weights and bias)."""
    dw = a.weights - b.weights
    db = a.bias - b.bias
    return float(np.dot(dw.ravel(), dw.ravel()) + np.dot(db, db))


def local_train_fedprox(
    global_params: ModelParams,
    dataset: Dataset,
    shard: ClientShard,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> ModelParams:
    """Run E epochs of mini-batch SGD on the proximal local objective.

    Starts from a copy of the global parameters and minimizes the client's
    cross-entropy plus (mu/2)||w - w_global||^2; the proximal gradient is
    applied at every mini-batch step.  Epoch shuffling is driven only by the
    supplied rng stream, so training is reproducible and scheduling-free.
    """
    cfg.validate()
    if shard.size == 0:
        raise DomainError(f"client {shard.client_id} has an empty shard")
    x = np.ascontiguousarray(dataset.features[shard.sample_indices])
    y = np.ascontiguousarray(dataset.labels[shard.sample_indices])
    perms = np.stack([rng.permutation(shard.size) for _ in range(cfg.local_epochs)])
    w, b = backend.fedprox_sgd(
        global_params.weights,
        global_params.bias,
        x,
        y,
        perms,
        cfg.batch_size,
        cfg.learning_rate,
        cfg.proximal_mu,
    )
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
        raise DivergenceError(
            f"client {shard.client_id}: non-finite parameters after local training"
        )
    return ModelParams(w, b)
