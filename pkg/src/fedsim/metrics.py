"""Evaluation metrics and theory diagnostics over round telemetry.

Beyond the accuracy summaries, this module hosts the executable checks for
the selector's guarantees: the exploration probability floor, the effective
heterogeneity of selected subsets, the optimal-regularization estimate, the
additive-vs-multiplicative concentration experiment, and the drift probe
over the proximal-coefficient grid.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import model
from .data import ClientShard, Dataset
from .engine import ExperimentConfig, ExperimentResult, RoundRecord, run_experiment
from .errors import DomainError
from .model import ModelParams
from .scoring import (
    SelectorConfig,
    compose_score,
    exploration_lower_bound,
    selection_probabilities,
)


@dataclass
class ExperimentSummary:
    peak_accuracy: float
    final_accuracy: float
    stable_accuracy: float  # mean of the trailing min(10, T) rounds
    stability_drop: float  # peak - final
    selection_counts: tuple[int, ...]
    selection_count_std: float
    drift_by_mu: dict[float, float] | None = None
    heterogeneity_trace: tuple[float, ...] | None = None


def summarize(records: list[RoundRecord]) -> ExperimentSummary:
    """Accuracy and selection-spread summary of one experiment."""
    if not records:
        raise DomainError("no round records to summarize")
    acc = np.asarray([r.global_accuracy for r in records])
    counts = np.zeros(records[0].n_clients, dtype=np.int64)
    for r in records:
        for k in r.selected:
            counts[k] += 1
    peak = float(acc.max())
    final = float(acc[-1])
    window = min(10, acc.size)
    return ExperimentSummary(
        peak_accuracy=peak,
        final_accuracy=final,
        stable_accuracy=float(acc[-window:].mean()),
        stability_drop=peak - final,
        selection_counts=tuple(int(c) for c in counts),
        selection_count_std=selection_concentration(counts),
    )


def selection_concentration(counts) -> float:
    """Population standard deviation of per-client selection counts."""
    return float(np.std(np.asarray(counts, dtype=np.float64)))


def effective_heterogeneity(
    dataset: Dataset,
    shards: list[ClientShard],
    params: ModelParams,
    selected,
) -> float:
    """Mean squared deviation of selected clients' gradients from the global.

    The global gradient is the unweighted mean of all clients' full-batch
    gradients (matching a global objective that averages client objectives);
    with ``selected`` covering every client this is the population
    heterogeneity itself.
    """
    selected = [int(k) for k in selected]
    if not selected:
        raise DomainError("selected set is empty")
    grads = [model.gradient(params, dataset, s.sample_indices) for s in shards]
    mean_grad = ModelParams(
        np.mean([g.weights for g in grads], axis=0),
        np.mean([g.bias for g in grads], axis=0),
    )
    return float(
        np.mean([model.param_sq_distance(grads[k], mean_grad) for k in selected])
    )


def heterogeneity_comparison(
    result: ExperimentResult,
) -> list[tuple[float, float]]:
    """Per-round (selected-subset, all-clients) heterogeneity at round start.

    A measured diagnostic: intelligent selection is expected, not guaranteed,
    to keep the first column below the second.
    """
    out = []
    all_ids = list(range(len(result.shards)))
    for record, params in zip(result.records, result.round_start_params):
        b_sel = effective_heterogeneity(
            result.train_dataset, result.shards, params, record.selected
        )
        b_all = effective_heterogeneity(
            result.train_dataset, result.shards, params, all_ids
        )
        out.append((b_sel, b_all))
    return out


def optimal_mu_estimate(
    local_epochs: int,
    local_lr: float,
    grad_sq_bound: float,
    heterogeneity_sq: float,
    dist_sq: float,
) -> float:
    """Proximal coefficient minimizing the drift bound: E*lr*(G^2+B^2)/dist^2.

    Diagnostic only; the distance to a true stationary point is estimated by
    a best-accuracy proxy in practice.
    """
    values = (local_epochs, local_lr, grad_sq_bound, heterogeneity_sq, dist_sq)
    if any(v <= 0 for v in values):
        raise DomainError("all inputs must be positive")
    return local_epochs * local_lr * (grad_sq_bound + heterogeneity_sq) / dist_sq


def measure_mu_star(result: ExperimentResult) -> tuple[float, dict[str, float]]:
    """Estimate the optimal proximal coefficient from run telemetry.

    Uses the max observed squared client-gradient norm for the gradient
    bound, the final-round selected-subset heterogeneity, and the squared
    distance from the initial model to the best-accuracy model as the
    stationary-point proxy.
    """
    g_sq_hat = 0.0
    for params in result.round_start_params:
        for shard in result.shards:
            g = model.gradient(params, result.train_dataset, shard.sample_indices)
            g_sq = float(np.sum(g.weights**2) + np.sum(g.bias**2))
            g_sq_hat = max(g_sq_hat, g_sq)

    last = result.records[-1]
    b_sel_sq_hat = effective_heterogeneity(
        result.train_dataset,
        result.shards,
        result.round_start_params[-1],
        last.selected,
    )

    accs = [r.global_accuracy for r in result.records]
    best_round = int(np.argmax(accs))
    # Params recorded at round start; the model after round i starts round i+1.
    best_params = (
        result.final_params
        if best_round == len(result.records) - 1
        else result.round_start_params[best_round + 1]
    )
    dist_sq_hat = model.param_sq_distance(result.round_start_params[0], best_params)

    parts = {
        "grad_sq_bound": g_sq_hat,
        "heterogeneity_sq": b_sel_sq_hat,
        "dist_sq": dist_sq_hat,
    }
    mu = optimal_mu_estimate(
        result.config.train.local_epochs,
        result.config.train.learning_rate,
        g_sq_hat,
        b_sel_sq_hat,
        dist_sq_hat,
    )
    return mu, parts


@dataclass(frozen=True)
class CvComparison:
    fraction_mult_ge_add: float
    mean_cv_additive: float
    mean_cv_multiplicative: float


def composition_cvs(components: np.ndarray) -> tuple[float, float]:
    """Selection-probability CVs for one matrix of component scores.

    ``components`` is (n_clients, 6) with entries in [0, 1].  The additive
    probabilities are the temperature-1 softmax of the summed scores with
    the last three components shifted to their neutral-zero forms.  The
    multiplicative probabilities are proportional to the product score
    (equivalently, a softmax over log scores): variability of a product
    lives on the log scale, which is what compounds concentration.
    """
    add = components[:, :3].sum(axis=1) + (components[:, 3:] - 1.0).sum(axis=1)
    mult = components.prod(axis=1)
    p_add = selection_probabilities(add, 1.0)
    total = mult.sum()
    p_mult = mult / total if total > 0 else np.full(mult.size, 1.0 / mult.size)

    def _cv(p: np.ndarray) -> float:
        return float(np.std(p) / np.mean(p))

    return _cv(p_add), _cv(p_mult)


def cv_comparison_experiment(
    n_clients: int,
    n_trials: int,
    rng: np.random.Generator,
) -> CvComparison:
    """Monte-Carlo comparison of additive vs multiplicative concentration.

    Draws six independent Uniform[0,1] components per client per trial and
    reports how often the multiplicative composition yields the more peaked
    probability vector.
    """
    if n_clients < 2:
        raise DomainError("need n_clients >= 2")
    if n_trials < 1:
        raise DomainError("need n_trials >= 1")
    wins = 0
    cvs = np.zeros((n_trials, 2))
    for i in range(n_trials):
        cv_add, cv_mult = composition_cvs(rng.uniform(size=(n_clients, 6)))
        cvs[i] = (cv_add, cv_mult)
        wins += cv_mult >= cv_add
    return CvComparison(
        fraction_mult_ge_add=wins / n_trials,
        mean_cv_additive=float(cvs[:, 0].mean()),
        mean_cv_multiplicative=float(cvs[:, 1].mean()),
    )


def drift_probe(
    base_cfg: ExperimentConfig,
    mu_grid: list[float],
    seeds: list[int],
) -> dict[float, float]:
    """Mean local drift per proximal coefficient, all else fixed.

    Runs the full engine per (mu, seed) and averages the per-round mean
    squared client drift across rounds and seeds.
    """
    if not mu_grid:
        raise DomainError("mu grid is empty")
    if not seeds:
        raise DomainError("need at least one seed")
    out: dict[float, float] = {}
    for mu in mu_grid:
        drifts = []
        for seed in seeds:
            cfg = replace(
                base_cfg,
                train=replace(base_cfg.train, proximal_mu=mu),
                master_seed=seed,
            )
            result = run_experiment(cfg)
            drifts.append(np.mean([r.mean_drift for r in result.records]))
        out[mu] = float(np.mean(drifts))
    return out


def exploration_bound_check(
    result: ExperimentResult,
) -> tuple[float, float]:
    """Fraction of (client, round) pairs whose realized selection probability
    meets the staleness exploration floor, and the worst margin seen.

    The floor is evaluated per round from the realized extremes of the
    non-staleness score, the realized temperature, and candidates-minus-one
    competitors; the staleness weight scales the effective bonus.
    """
    cfg = result.config.selector
    if not isinstance(cfg, SelectorConfig) or cfg.composition != "additive":
        raise DomainError(
            "exploration bound applies to the additive scoring selector only"
        )
    gamma_eff = cfg.weight_staleness * cfg.staleness_gamma
    ok = 0
    total = 0
    worst = np.inf
    for record in result.records:
        comps = record.components
        non_staleness = [
            compose_score(c, cfg) - cfg.weight_staleness * (c.staleness - 1.0)
            for c in comps
        ]
        s_min = min(non_staleness)
        s_max = max(non_staleness)
        for k, prob in enumerate(record.probabilities):
            bound = exploration_lower_bound(
                s_min,
                s_max,
                gamma_eff,
                record.staleness_ages[k],
                record.temperature,
                record.n_clients - 1,
                cfg.staleness_cap,
            )
            margin = prob - bound
            worst = min(worst, margin)
            ok += margin >= -1e-12
            total += 1
    return ok / total, float(worst)
