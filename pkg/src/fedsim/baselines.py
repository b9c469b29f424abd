"""Reference selectors: uniform random, Power-of-Choice, and an Oort-like
utility selector.

``oort_like`` keeps only the statistical-utility half of its namesake
(last recorded loss) plus an explicit exploration fill; system utility and
the pacer are deliberately out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .scoring import ClientMetadata


@dataclass
class BaselineConfig:
    kind: str = "random"  # random | power_of_choice | oort_like
    candidate_count: int | None = None  # power_of_choice only
    exploration_fraction: float = 0.2  # oort_like only

    def validate(self, subset_size: int | None = None) -> None:
        if self.kind not in ("random", "power_of_choice", "oort_like"):
            raise ConfigError(f"unknown baseline kind '{self.kind}'")
        if self.kind == "power_of_choice":
            if self.candidate_count is None:
                raise ConfigError("power_of_choice requires candidate_count")
            if subset_size is not None and self.candidate_count < subset_size:
                raise ConfigError("candidate_count must be >= clients per round")
        if self.kind == "oort_like" and not 0.0 <= self.exploration_fraction <= 1.0:
            raise ConfigError("exploration_fraction must be in [0, 1]")


def random_select(client_ids, m: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample of m ids without replacement."""
    ids = np.asarray(client_ids, dtype=np.int64)
    if m > ids.size:
        raise ConfigError(f"cannot select {m} of {ids.size} clients")
    return np.sort(rng.choice(ids, size=m, replace=False))


def power_of_choice_select(
    losses: np.ndarray,
    m: int,
    d: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw d uniform candidates, keep the m with highest current loss."""
    losses = np.asarray(losses, dtype=np.float64)
    n = losses.size
    if not m <= d <= n:
        raise ConfigError(f"need m <= d <= n, got m={m}, d={d}, n={n}")
    candidates = rng.choice(n, size=d, replace=False)
    ranked = sorted(candidates.tolist(), key=lambda k: (-losses[k], k))
    return np.sort(np.asarray(ranked[:m], dtype=np.int64))


def oort_like_select(
    metadata: list[ClientMetadata],
    m: int,
    round_index: int,
    exploration_fraction: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Top clients by last recorded loss, plus a stale-first exploration fill.

    The exploit slice takes floor((1 - exploration_fraction) * m) clients
    ranked by their last recorded loss (ties to the lower id); remaining
    slots fill from the stalest clients, sampling uniformly inside a tier
    that does not fit whole.
    """
    n = len(metadata)
    if m > n:
        raise ConfigError(f"cannot select {m} of {n} clients")

    n_exploit = int((1.0 - exploration_fraction) * m)
    with_loss = [md for md in metadata if md.loss_history]
    ranked = sorted(with_loss, key=lambda md: (-md.loss_history[-1][1], md.client_id))
    chosen = {md.client_id for md in ranked[:n_exploit]}

    remaining = m - len(chosen)
    if remaining > 0:
        pool = [md for md in metadata if md.client_id not in chosen]
        tiers: dict[int, list[int]] = {}
        for md in pool:
            last = -1 if md.last_selected_round is None else md.last_selected_round
            tiers.setdefault(last, []).append(md.client_id)
        for last in sorted(tiers):
            tier = sorted(tiers[last])
            if remaining >= len(tier):
                chosen.update(tier)
                remaining -= len(tier)
            else:
                picked = rng.choice(
                    np.asarray(tier, dtype=np.int64), size=remaining, replace=False
                )
                chosen.update(int(c) for c in picked)
                remaining = 0
            if remaining == 0:
                break

    return np.sort(np.asarray(sorted(chosen), dtype=np.int64))
