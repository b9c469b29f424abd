"""Federated round loop: scouting, selection, local training, aggregation.

Every round proceeds through fixed barriers: (1) all clients evaluate their
local loss on the current global model (the scouting pass feeding the
information-value score), (2) the configured selector picks the round's
subset, (3) selected clients train from the same global snapshot, (4) the
server averages the returned models and updates client metadata.

Determinism: every random decision draws from its own stream keyed by
(master_seed, stream tag, client id, round), so results are bit-identical
regardless of how many threads execute the client phases.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import model
from .baselines import (
    BaselineConfig,
    oort_like_select,
    power_of_choice_select,
    random_select,
)
from .data import (
    ClientShard,
    Dataset,
    average_distribution,
    dirichlet_partition,
    generate_synthetic,
    label_distribution,
    load_csv,
)
from .errors import ConfigError, DivergenceError, DomainError
from .model import ModelParams, TrainConfig
from .scoring import (
    ClientMetadata,
    ScoreComponents,
    SelectorConfig,
    compose_score,
    compute_components,
    dynamic_temperature,
    sample_subset,
    selection_probabilities,
    validate_components,
)

# Stream tags keep every seeded generator independent of the others.
_STREAM_SPLIT = 1
_STREAM_PARTITION = 2
_STREAM_INIT = 3
_STREAM_SELECT = 4
_STREAM_TRAIN = 5


@dataclass
class DatasetSpec:
    """Where the experiment's data comes from: Gaussian blobs or a CSV."""

    kind: str = "synthetic"  # synthetic | csv
    n_classes: int = 10
    n_features: int = 32
    n_per_class: int = 120
    class_separation: float = 3.0
    seed: int = 7
    path: str | None = None

    def validate(self) -> None:
        if self.kind not in ("synthetic", "csv"):
            raise ConfigError(f"unknown dataset kind '{self.kind}'")
        if self.kind == "csv" and not self.path:
            raise ConfigError("csv dataset requires a path")

    def build(self) -> Dataset:
        self.validate()
        if self.kind == "csv":
            return load_csv(self.path)
        return generate_synthetic(
            self.seed,
            self.n_classes,
            self.n_features,
            self.n_per_class,
            self.class_separation,
        )


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    n_clients: int = 12
    dirichlet_alpha: float = 0.1
    rounds: int = 60
    clients_per_round: int = 6
    selector: SelectorConfig | BaselineConfig = field(default_factory=SelectorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    test_fraction: float = 0.2
    master_seed: int = 0
    parallelism: int = 1
    # Off by default: plain 1/m averaging; on: weight by shard sample counts.
    sample_weighted_aggregation: bool = False
    # Off by default: peer-average label distribution is client-uniform.
    sample_weighted_peer_average: bool = False

    def validate(self) -> None:
        self.dataset.validate()
        if self.n_clients < 2:
            raise ConfigError("n_clients (K) must be >= 2")
        if self.rounds < 1:
            raise ConfigError("rounds (T) must be >= 1")
        if not 1 <= self.clients_per_round <= self.n_clients:
            raise ConfigError("need 1 <= clients_per_round (m) <= n_clients (K)")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in (0, 1)")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        self.train.validate()
        if isinstance(self.selector, SelectorConfig):
            self.selector.validate()
        else:
            self.selector.validate(self.clients_per_round)


@dataclass
class RoundRecord:
    """Telemetry for one round; wall time is informational, not compared."""

    round_index: int
    n_clients: int
    selected: tuple[int, ...]
    global_accuracy: float
    mean_drift: float
    temperature: float | None = None
    probabilities: tuple[float, ...] | None = None
    components: tuple[ScoreComponents, ...] | None = None
    staleness_ages: tuple[int, ...] | None = None
    agg_wall_time: float = field(default=0.0, compare=False)


@dataclass
class ExperimentResult:
    """Round records plus the artifacts diagnostics need to dig deeper."""

    records: list[RoundRecord]
    final_params: ModelParams
    config: ExperimentConfig
    train_dataset: Dataset
    test_dataset: Dataset
    shards: list[ClientShard]
    metadata: list[ClientMetadata]
    client_label_dists: list[np.ndarray]
    round_start_params: list[ModelParams]


def fedavg_aggregate(local_params: list[ModelParams]) -> ModelParams:
    """Unweighted element-wise mean of the returned client models."""
    if not local_params:
        raise DomainError("nothing to aggregate")
    shape = (local_params[0].weights.shape, local_params[0].bias.shape)
    for p in local_params:
        if (p.weights.shape, p.bias.shape) != shape:
            raise DomainError("aggregation inputs have mismatched shapes")
    return ModelParams(
        np.mean([p.weights for p in local_params], axis=0),
        np.mean([p.bias for p in local_params], axis=0),
    )


def _weighted_aggregate(
    local_params: list[ModelParams], weights: np.ndarray
) -> ModelParams:
    w = weights / weights.sum()
    return ModelParams(
        np.tensordot(w, np.stack([p.weights for p in local_params]), axes=1),
        np.tensordot(w, np.stack([p.bias for p in local_params]), axes=1),
    )


def update_metadata(
    metadata: list[ClientMetadata],
    round_index: int,
    selected,
    update_norms: dict[int, float],
    scouting_losses: np.ndarray,
) -> list[ClientMetadata]:
    """Append scouting losses for all clients; advance the selection log.

    Selected clients get their participation count incremented, their
    last-selected round set, and their squared update norm recorded.
    """
    known = {md.client_id for md in metadata}
    for k in selected:
        if int(k) not in known:
            raise DomainError(f"unknown client id {k}")
    for md, loss_value in zip(metadata, scouting_losses):
        md.loss_history.append((round_index, float(loss_value)))
    for k in selected:
        md = metadata[int(k)]
        md.participation_count += 1
        md.last_selected_round = round_index
        md.last_update_norm_sq = update_norms[int(k)]
    return metadata


def _thread_budget(parallelism: int) -> int:
    env = os.environ.get("FEDSIM_THREADS", "")
    if env:
        try:
            parallelism = min(parallelism, int(env))
        except ValueError:
            raise ConfigError(f"FEDSIM_THREADS must be an integer, got '{env}'")
    return max(1, parallelism)


def _stratified_split(
    dataset: Dataset, test_fraction: float, seed
) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(dataset.n_classes):
        class_idx = rng.permutation(np.flatnonzero(dataset.labels == c))
        n_test = int(round(test_fraction * class_idx.size))
        if n_test >= class_idx.size:
            n_test = class_idx.size - 1
        test_idx.extend(class_idx[:n_test].tolist())
        train_idx.extend(class_idx[n_test:].tolist())
    if not test_idx:
        raise ConfigError("test split is empty; increase test_fraction or data size")
    train_idx = np.sort(np.asarray(train_idx, dtype=np.int64))
    test_idx = np.sort(np.asarray(test_idx, dtype=np.int64))

    def _subset(idx: np.ndarray) -> Dataset:
        return Dataset(
            np.ascontiguousarray(dataset.features[idx]),
            dataset.labels[idx].copy(),
            dataset.n_classes,
        )

    return _subset(train_idx), _subset(test_idx)


def _select(
    cfg: ExperimentConfig,
    round_index: int,
    metadata: list[ClientMetadata],
    scout_losses: np.ndarray,
    client_dists: list[np.ndarray],
    peer_avg: np.ndarray,
    rng: np.random.Generator,
):
    """Run the configured selector; returns (ids, hetero telemetry or None)."""
    m = cfg.clients_per_round
    sel = cfg.selector
    if isinstance(sel, SelectorConfig):
        components = compute_components(
            metadata, scout_losses, client_dists, peer_avg, round_index, sel
        )
        for c in components:
            validate_components(c, sel)
        scores = np.asarray([compose_score(c, sel) for c in components])
        tau = dynamic_temperature(round_index, sel.base_temperature, sel.schedule_horizon)
        probs = selection_probabilities(scores, tau)
        ages = tuple(
            round_index - (-1 if md.last_selected_round is None else md.last_selected_round)
            for md in metadata
        )
        return sample_subset(probs, m, rng), (tau, probs, tuple(components), ages)
    if sel.kind == "random":
        return random_select(np.arange(cfg.n_clients), m, rng), None
    if sel.kind == "power_of_choice":
        return power_of_choice_select(scout_losses, m, sel.candidate_count, rng), None
    return oort_like_select(metadata, m, round_index, sel.exploration_fraction, rng), None


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Execute the configured number of federated rounds.

    Returns per-round telemetry and the final global model; fully
    deterministic given the config (including under thread parallelism).
    """
    cfg.validate()
    full = cfg.dataset.build()
    train_ds, test_ds = _stratified_split(
        full, cfg.test_fraction, [cfg.master_seed, _STREAM_SPLIT]
    )
    shards = dirichlet_partition(
        train_ds, cfg.n_clients, cfg.dirichlet_alpha, [cfg.master_seed, _STREAM_PARTITION]
    )
    client_dists = [
        label_distribution(train_ds, s, train_ds.n_classes) for s in shards
    ]
    if cfg.sample_weighted_peer_average:
        sizes = np.asarray([s.size for s in shards], dtype=np.float64)
        peer_avg = np.average(np.stack(client_dists), axis=0, weights=sizes)
    else:
        peer_avg = average_distribution(client_dists)

    params = model.init_params(
        train_ds.n_features, train_ds.n_classes, [cfg.master_seed, _STREAM_INIT]
    )
    metadata = [ClientMetadata(k) for k in range(cfg.n_clients)]
    shard_sizes = np.asarray([s.size for s in shards], dtype=np.float64)
    threads = _thread_budget(cfg.parallelism)
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    records: list[RoundRecord] = []
    round_start_params: list[ModelParams] = []
    try:
        for t in range(cfg.rounds):
            round_start_params.append(params.copy())
            scout = np.asarray(
                [model.loss(params, train_ds, s.sample_indices) for s in shards]
            )
            if not np.all(np.isfinite(scout)):
                bad = int(np.flatnonzero(~np.isfinite(scout))[0])
                raise DivergenceError(f"round {t}: client {bad}: non-finite loss")

            rng_sel = np.random.default_rng([cfg.master_seed, _STREAM_SELECT, t])
            selected, hetero_info = _select(
                cfg, t, metadata, scout, client_dists, peer_avg, rng_sel
            )

            def _train_one(k: int):
                rng = np.random.default_rng([cfg.master_seed, _STREAM_TRAIN, int(k), t])
                local = model.local_train_fedprox(
                    params, train_ds, shards[int(k)], cfg.train, rng
                )
                return int(k), local

            try:
                if pool is not None and len(selected) > 1:
                    results = dict(pool.map(_train_one, selected))
                else:
                    results = dict(map(_train_one, selected))
            except DivergenceError as exc:
                raise DivergenceError(f"round {t}: {exc}") from exc

            order = sorted(results)
            locals_sorted = [results[k] for k in order]
            norms = {
                k: model.param_sq_distance(results[k], params) for k in order
            }
            mean_drift = float(np.mean([norms[k] for k in order]))

            t0 = time.perf_counter()
            if cfg.sample_weighted_aggregation:
                params = _weighted_aggregate(locals_sorted, shard_sizes[order])
            else:
                params = fedavg_aggregate(locals_sorted)
            agg_time = time.perf_counter() - t0

            update_metadata(metadata, t, order, norms, scout)
            record = RoundRecord(
                round_index=t,
                n_clients=cfg.n_clients,
                selected=tuple(order),
                global_accuracy=model.accuracy(params, test_ds),
                mean_drift=mean_drift,
                agg_wall_time=agg_time,
            )
            if hetero_info is not None:
                tau, probs, components, ages = hetero_info
                record.temperature = tau
                record.probabilities = tuple(float(p) for p in probs)
                record.components = components
                record.staleness_ages = ages
            records.append(record)
    finally:
        if pool is not None:
            pool.shutdown()

    return ExperimentResult(
        records=records,
        final_params=params,
        config=cfg,
        train_dataset=train_ds,
        test_dataset=test_ds,
        shards=shards,
        metadata=metadata,
        client_label_dists=client_dists,
        round_start_params=round_start_params,
    )


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    """Shallow-copy the config with replaced fields (sub-configs included)."""
    return replace(cfg, **changes)
