"""Synthetic datasets and Dirichlet label-skew partitioning.

Clients receive disjoint index shards of a single dataset.  Non-IID label
skew is induced by sampling, for every class, a Dirichlet distribution over
clients; smaller ``alpha`` concentrates each class on fewer clients.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus integer class labels in ``[0, n_classes)``."""

    features: np.ndarray  # (n_samples, n_features) float64
    labels: np.ndarray  # (n_samples,) int64
    n_classes: int

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise DomainError("features must be 2-D and labels 1-D")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DomainError("features and labels disagree on sample count")
        if self.features.shape[0] < 1:
            raise DomainError("dataset must contain at least one sample")
        if not np.all(np.isfinite(self.features)):
            raise DomainError("features contain NaN or Inf")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise DomainError(f"labels must lie in [0, {self.n_classes})")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ClientShard:
    """Index list owned by one client; shards of a partition are disjoint."""

    client_id: int
    sample_indices: np.ndarray  # (n_k,) int64

    @property
    def size(self) -> int:
        return self.sample_indices.shape[0]


def generate_synthetic(
    seed: int,
    n_classes: int,
    n_features: int,
    n_per_class: int,
    class_separation: float,
) -> Dataset:
    """Generate isotropic Gaussian blobs, one unit-variance blob per class.

    Class centroids are sampled uniformly on the sphere of radius
    ``class_separation``, so the separation parameter controls task
    difficulty.  Output is deterministic for a given seed.
    """
    if n_classes < 2 or n_features < 2:
        raise ConfigError("need n_classes >= 2 and n_features >= 2")
    if n_per_class < 10:
        raise ConfigError("need n_per_class >= 10")
    if class_separation <= 0:
        raise ConfigError("class_separation must be positive")

    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(n_classes, n_features))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centroids = class_separation * directions

    features = np.concatenate(
        [c + rng.normal(size=(n_per_class, n_features)) for c in centroids]
    )
    labels = np.repeat(np.arange(n_classes, dtype=np.int64), n_per_class)
    return Dataset(np.ascontiguousarray(features), labels, n_classes)


def load_csv(path: str) -> Dataset:
    """Load a dataset from CSV with header ``f0,...,f{d-1},label``.

    The label column must be last and parse as a base-10 integer; all other
    columns are read as float features.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty CSV") from None
        if len(header) < 2 or header[-1].strip() != "label":
            raise ConfigError(f"{path}: last column must be named 'label'")
        features, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ConfigError(f"{path}:{lineno}: expected {len(header)} columns")
            try:
                features.append([float(v) for v in row[:-1]])
                labels.append(int(row[-1], 10))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    if not features:
        raise ConfigError(f"{path}: no data rows")
    labels_arr = np.asarray(labels, dtype=np.int64)
    if labels_arr.min() < 0:
        raise ConfigError(f"{path}: labels must be non-negative")
    return Dataset(
        np.asarray(features, dtype=np.float64),
        labels_arr,
        int(labels_arr.max()) + 1,
    )


def _largest_remainder_counts(proportions: np.ndarray, total: int) -> np.ndarray:
    """Round fractional quotas to integers that sum exactly to ``total``."""
    quotas = proportions * total
    counts = np.floor(quotas).astype(np.int64)
    short = total - int(counts.sum())
    # Ties on the remainder go to the lower client id (stable sort).
    order = np.argsort(-(quotas - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def dirichlet_partition(
    dataset: Dataset,
    n_clients: int,
    alpha: float,
    seed: int,
) -> list[ClientShard]:
    """Partition dataset indices across clients with Dirichlet label skew.

    For every class, client proportions are drawn from Dirichlet(alpha) and
    the class's samples are assigned by largest-remainder rounding, so the
    shards are an exact partition of the index set.  Clients left empty by
    rounding are repaired by stealing one sample from the largest shard.

    Args:
        dataset: the dataset to split.
        n_clients: number of clients (>= 2).
        alpha: Dirichlet concentration; smaller means more skew.
        seed: seed for the partition's random stream.

    Returns:
        One shard per client, indices sorted, shards disjoint and exhaustive.
    """
    if n_clients < 2:
        raise ConfigError("need n_clients >= 2")
    if alpha <= 0:
        raise ConfigError("alpha must be positive")
    if n_clients > dataset.n_samples:
        raise ConfigError(
            f"cannot split {dataset.n_samples} samples across {n_clients} clients"
        )

    rng = np.random.default_rng(seed)
    assigned: list[list[int]] = [[] for _ in range(n_clients)]
    for c in range(dataset.n_classes):
        class_idx = np.flatnonzero(dataset.labels == c)
        if class_idx.size == 0:
            continue
        rng.shuffle(class_idx)
        proportions = rng.dirichlet(np.full(n_clients, alpha))
        counts = _largest_remainder_counts(proportions, class_idx.size)
        start = 0
        for k, cnt in enumerate(counts):
            assigned[k].extend(class_idx[start : start + cnt].tolist())
            start += cnt

    # Repair: every client must own at least one sample so its local loss
    # is defined.
    while any(len(a) == 0 for a in assigned):
        needy = min(k for k in range(n_clients) if len(assigned[k]) == 0)
        donor = max(range(n_clients), key=lambda k: (len(assigned[k]), -k))
        assigned[needy].append(assigned[donor].pop())

    return [
        ClientShard(k, np.sort(np.asarray(a, dtype=np.int64)))
        for k, a in enumerate(assigned)
    ]


def label_distribution(
    dataset: Dataset,
    shard: ClientShard,
    n_classes: int,
) -> np.ndarray:
    """Empirical class frequencies of one shard (sums to 1)."""
    if shard.size == 0:
        raise DomainError(f"client {shard.client_id} has an empty shard")
    counts = np.bincount(dataset.labels[shard.sample_indices], minlength=n_classes)
    return counts / shard.size


def average_distribution(distributions: list[np.ndarray]) -> np.ndarray:
    """Unweighted element-wise mean of client label distributions."""
    if not distributions:
        raise DomainError("need at least one distribution")
    length = distributions[0].shape[0]
    if any(d.shape != (length,) for d in distributions):
        raise DomainError("distributions have mismatched lengths")
    return np.mean(np.stack(distributions), axis=0)
