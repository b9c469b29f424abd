"""Multi-criteria client scoring and probabilistic subset selection.

Each round every candidate client receives six scores: information value
(normalized local loss), label diversity, loss momentum, fairness,
staleness, and an update-norm penalty.  Scores compose additively or
multiplicatively, become probabilities through a temperature-controlled
softmax, and the subset is drawn without replacement via Gumbel-top-k.

Natural logarithms are used throughout (staleness bonus, divergence,
exploration bound); switching to another base would only rescale the
staleness and diversity weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError

# Upper bound of the Jensen-Shannon divergence in nats.
_JS_MAX = math.log(2.0)


@dataclass
class ClientMetadata:
    """Server-side bookkeeping for one client.

    ``loss_history`` holds (round, loss) pairs appended by the per-round
    scouting pass; ``participation_count`` and ``last_selected_round`` track
    the selection log (``None`` until first selected); ``last_update_norm_sq``
    is the squared distance of the client's last returned model from the
    global model it started from (``None`` until it first participates).
    """

    client_id: int
    loss_history: list[tuple[int, float]] = field(default_factory=list)
    participation_count: int = 0
    last_selected_round: int | None = None
    last_update_norm_sq: float | None = None


@dataclass(frozen=True)
class ScoreComponents:
    """The six per-client scores for one round."""

    info_value: float  # [0, 1]
    diversity: float  # [0, 2*ln 2]
    momentum: float  # [-0.5, 1.5]
    fairness: float  # (0, 1]
    staleness: float  # [1, 1 + gamma*ln(1 + t_max)]
    norm_penalty: float  # [1 - norm_alpha, 1]


@dataclass
class SelectorConfig:
    """Hyperparameters of the multi-criteria selector.

    Defaults are the champion configuration: unit component weights,
    staleness 0.7, fairness 0.3, base temperature 2.0, additive composition.
    """

    weight_info: float = 1.0
    weight_diversity: float = 1.0
    weight_momentum: float = 1.0
    weight_fairness: float = 1.0
    weight_staleness: float = 1.0
    weight_norm: float = 1.0
    fairness_eta: float = 0.3
    staleness_gamma: float = 0.7
    norm_alpha: float = 0.5
    base_temperature: float = 2.0
    staleness_cap: int = 20
    epsilon: float = 1e-8
    composition: str = "additive"
    subset_size: int = 6
    # Rounds over which the diversity boost and temperature decay; a fixed
    # horizon, not the experiment length.
    schedule_horizon: int = 100

    def validate(self) -> None:
        if self.fairness_eta < 0:
            raise ConfigError("fairness_eta must be >= 0")
        if self.staleness_gamma < 0:
            raise ConfigError("staleness_gamma must be >= 0")
        if not 0.0 <= self.norm_alpha <= 1.0:
            raise ConfigError("norm_alpha must be in [0, 1]")
        if self.base_temperature <= 0:
            raise ConfigError("base_temperature must be positive")
        if self.staleness_cap < 1:
            raise ConfigError("staleness_cap must be >= 1")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.composition not in ("additive", "multiplicative"):
            raise ConfigError(f"unknown composition '{self.composition}'")
        if self.subset_size < 1:
            raise ConfigError("subset_size must be >= 1")
        if self.schedule_horizon < 1:
            raise ConfigError("schedule_horizon must be >= 1")


def normalized_info_values(losses: np.ndarray, epsilon: float) -> np.ndarray:
    """Min-max normalize per-client losses into [0, 1]."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size < 1:
        raise DomainError("need at least one loss value")
    if not np.all(np.isfinite(losses)):
        raise DomainError("losses contain NaN or Inf")
    lo = losses.min()
    hi = losses.max()
    return (losses - lo) / (hi - lo + epsilon)


def js_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence in nats, with 0*log(0/x) taken as 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DomainError("distributions have mismatched lengths")
    m = 0.5 * (p + q)

    def _kl(a: np.ndarray) -> float:
        mask = a > 0
        return float(np.sum(a[mask] * np.log(a[mask] / m[mask])))

    return 0.5 * _kl(p) + 0.5 * _kl(q)


def diversity_multiplier(round_index: int, horizon: int = 100) -> float:
    """Decays linearly from 2 at round 0 to 1 at the horizon, then stays 1."""
    return 2.0 * (1.0 - 0.5 * min(round_index / horizon, 1.0))


def diversity_score(
    client_dist: np.ndarray,
    peer_avg_dist: np.ndarray,
    round_index: int,
    horizon: int = 100,
) -> float:
    """JS divergence from the peer-average distribution, boosted early."""
    if round_index < 0:
        raise DomainError("round_index must be >= 0")
    return js_divergence(client_dist, peer_avg_dist) * diversity_multiplier(
        round_index, horizon
    )


def momentum_factor(loss_prev2: float | None, loss_prev1: float | None) -> float:
    """Bounded transform of the relative loss change between two rounds.

    Maps the relative improvement m = (prev2 - prev1)/prev2 through
    2/(1 + e^(-5m)) - 0.5 into [-0.5, 1.5].  With fewer than two recorded
    losses the neutral value 0.5 (the m = 0 fixed point) is returned.
    """
    if loss_prev2 is None or loss_prev1 is None:
        return 0.5
    if loss_prev2 <= 0:
        raise DomainError("older loss must be positive (it divides)")
    m = (loss_prev2 - loss_prev1) / loss_prev2
    z = -5.0 * m
    if z > 700.0:  # exp would overflow; the sigmoid has saturated
        return -0.5
    return 2.0 / (1.0 + math.exp(z)) - 0.5


def fairness_factor(h_k: int, h_max: int, eta: float) -> float:
    """Inverse-quadratic penalty on relative participation count."""
    if h_k < 0 or h_max < 0:
        raise DomainError("participation counts must be >= 0")
    if h_max == 0:
        # No one has participated yet, so no one is penalized.
        return 1.0
    return (1.0 + eta * h_k / h_max) ** -2


def staleness_factor(
    round_index: int,
    last_selected: int | None,
    gamma: float,
    staleness_cap: int = 20,
) -> float:
    """Log bonus on rounds since last selection, capped at ``staleness_cap``.

    Never-selected clients count as last selected at round -1, so they
    out-stale anyone picked at round 0.
    """
    if round_index < 0:
        raise DomainError("round_index must be >= 0")
    effective_last = -1 if last_selected is None else last_selected
    if round_index < effective_last:
        raise DomainError("round_index precedes last selection")
    age = round_index - effective_last
    return 1.0 + gamma * math.log(1.0 + min(age, staleness_cap))


def norm_penalty(
    update_norm_sq: float | None,
    avg_norm_sq: float,
    norm_alpha: float,
) -> float:
    """Sigmoid discount for clients whose last update was abnormally large.

    The ratio r of the client's squared update norm to the population
    average maps through 1 - alpha*(2/(1 + e^(-3r)) - 1); clients with no
    recorded update (or a zero population average) get r = 0, i.e. no
    penalty.
    """
    if (update_norm_sq is not None and update_norm_sq < 0) or avg_norm_sq < 0:
        raise DomainError("squared norms must be >= 0")
    if update_norm_sq is None or avg_norm_sq == 0:
        r = 0.0
    else:
        r = update_norm_sq / avg_norm_sq
    return 1.0 - norm_alpha * (2.0 / (1.0 + math.exp(-3.0 * r)) - 1.0)


def compose_score(c: ScoreComponents, cfg: SelectorConfig) -> float:
    """Combine the six components per the configured composition mode.

    Additive mode shifts fairness, staleness and norm penalty to their
    neutral-zero forms (F-1, St-1, N-1); multiplicative mode uses the raw
    factors.
    """
    if cfg.composition == "additive":
        return (
            cfg.weight_info * c.info_value
            + cfg.weight_diversity * c.diversity
            + cfg.weight_momentum * c.momentum
            + cfg.weight_fairness * (c.fairness - 1.0)
            + cfg.weight_staleness * (c.staleness - 1.0)
            + cfg.weight_norm * (c.norm_penalty - 1.0)
        )
    return (
        (c.info_value * c.diversity)
        * c.momentum
        * c.fairness
        * c.staleness
        * c.norm_penalty
    )


def dynamic_temperature(round_index: int, tau0: float, horizon: int = 100) -> float:
    """Halves the base temperature linearly over the horizon, then holds."""
    if round_index < 0:
        raise DomainError("round_index must be >= 0")
    if tau0 <= 0:
        raise DomainError("tau0 must be positive")
    return tau0 * (1.0 - 0.5 * min(round_index / horizon, 1.0))


def selection_probabilities(scores: np.ndarray, tau: float) -> np.ndarray:
    """Overflow-safe softmax of scores/tau."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size < 1:
        raise DomainError("need at least one score")
    if not np.all(np.isfinite(scores)):
        raise DomainError("scores contain NaN or Inf")
    if tau <= 0:
        raise DomainError("tau must be positive")
    z = scores / tau
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def sample_subset(
    probabilities: np.ndarray,
    m: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Sample m distinct client ids without replacement, Gumbel-top-k rule.

    Equivalent to sequential renormalized (Plackett-Luce) sampling but
    order-free and reproducible from a single rng draw.  Ties (only possible
    between zero-probability clients) resolve to the lower id.
    """
    probabilities = np.asarray(probabilities, dtype=np.float64)
    n = probabilities.size
    if m > n:
        raise ConfigError(f"cannot select {m} of {n} clients")
    if np.any(probabilities < 0) or abs(probabilities.sum() - 1.0) > 1e-9:
        raise DomainError("probabilities are not a valid simplex")
    with np.errstate(divide="ignore"):
        keys = np.log(probabilities) + rng.gumbel(size=n)
    order = np.argsort(-keys, kind="stable")
    return np.sort(order[:m])


def exploration_lower_bound(
    s_min: float,
    s_max: float,
    gamma: float,
    staleness_age: int,
    tau: float,
    n_other: int,
    staleness_cap: int = 20,
) -> float:
    """Guaranteed floor on a stale client's single-draw selection probability.

    The client's own score is lower-bounded by the worst non-staleness score
    plus its (capped) staleness bonus; every competitor is upper-bounded by
    the best non-staleness score plus the full staleness bonus.
    """
    if s_min > s_max:
        raise DomainError("s_min must not exceed s_max")
    if tau <= 0:
        raise DomainError("tau must be positive")
    if staleness_age < 0:
        raise DomainError("staleness_age must be >= 0")
    if n_other < 1:
        raise DomainError("n_other must be >= 1")
    own = (s_min + gamma * math.log(1.0 + min(staleness_age, staleness_cap))) / tau
    rival = (s_max + gamma * math.log(1.0 + staleness_cap)) / tau
    try:
        return 1.0 / (1.0 + n_other * math.exp(rival - own))
    except OverflowError:
        return 0.0


def compute_components(
    metadata: list[ClientMetadata],
    scout_losses: np.ndarray,
    client_dists: list[np.ndarray],
    peer_avg_dist: np.ndarray,
    round_index: int,
    cfg: SelectorConfig,
) -> list[ScoreComponents]:
    """Assemble the six components for every candidate client.

    ``scout_losses`` are this round's losses on the current global model
    (not yet appended to the metadata histories); momentum therefore pairs
    each client's previous recorded loss with its current one.
    """
    info = normalized_info_values(scout_losses, cfg.epsilon)
    h_max = max(md.participation_count for md in metadata)
    recorded = [
        md.last_update_norm_sq for md in metadata if md.last_update_norm_sq is not None
    ]
    avg_norm_sq = float(np.mean(recorded)) if recorded else 0.0

    components = []
    for k, md in enumerate(metadata):
        prev = md.loss_history[-1][1] if md.loss_history else None
        components.append(
            ScoreComponents(
                info_value=float(info[k]),
                diversity=diversity_score(
                    client_dists[k], peer_avg_dist, round_index, cfg.schedule_horizon
                ),
                momentum=momentum_factor(prev, float(scout_losses[k])),
                fairness=fairness_factor(
                    md.participation_count, h_max, cfg.fairness_eta
                ),
                staleness=staleness_factor(
                    round_index, md.last_selected_round, cfg.staleness_gamma,
                    cfg.staleness_cap,
                ),
                norm_penalty=norm_penalty(
                    md.last_update_norm_sq, avg_norm_sq, cfg.norm_alpha
                ),
            )
        )
    return components


def validate_components(c: ScoreComponents, cfg: SelectorConfig) -> None:
    """Assert the per-component range invariants (cheap, run every round)."""
    tol = 1e-12
    st_max = 1.0 + cfg.staleness_gamma * math.log(1.0 + cfg.staleness_cap)
    checks = (
        ("info_value", c.info_value, 0.0, 1.0),
        ("diversity", c.diversity, 0.0, 2.0 * _JS_MAX),
        ("momentum", c.momentum, -0.5, 1.5),
        ("fairness", c.fairness, 0.0, 1.0),
        ("staleness", c.staleness, 1.0, st_max),
        ("norm_penalty", c.norm_penalty, 1.0 - cfg.norm_alpha, 1.0),
    )
    for name, value, lo, hi in checks:
        if not (lo - tol <= value <= hi + tol):
            raise DomainError(f"{name}={value} outside [{lo}, {hi}]")
    if c.fairness <= 0:
        raise DomainError("fairness must be strictly positive")
