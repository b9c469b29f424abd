"""Tests for the score components, composition, and subset sampling."""

import math

import numpy as np
import pytest

from fedsim.errors import ConfigError, DomainError
from fedsim.scoring import (
    ClientMetadata,
    ScoreComponents,
    SelectorConfig,
    compose_score,
    compute_components,
    diversity_multiplier,
    diversity_score,
    dynamic_temperature,
    exploration_lower_bound,
    fairness_factor,
    js_divergence,
    momentum_factor,
    normalized_info_values,
    norm_penalty,
    sample_subset,
    selection_probabilities,
    staleness_factor,
    validate_components,
)

# Closed-form values frozen from high-precision evaluation of the formulas.
MOMENTUM_AT_0P2 = 0.9621171572600098
FAIRNESS_AT_MAX_ETA_0P3 = 0.5917159763313609
STALENESS_G0P7_D5 = 2.2542316284596385
NORM_R1_A0P5 = 0.5474258731775668
BOUND_EXAMPLE = 0.020825446657933388


def test_info_values_examples():
    out = normalized_info_values(np.array([1.0, 2.0, 3.0]), 1e-8)
    assert np.allclose(out, [0.0, 0.5, 1.0], atol=1e-7)
    assert np.allclose(normalized_info_values(np.array([4.0, 4.0, 4.0]), 1e-8), 0.0)
    assert np.allclose(normalized_info_values(np.array([2.5]), 1e-8), [0.0])
    with pytest.raises(DomainError):
        normalized_info_values(np.array([1.0, np.nan]), 1e-8)


def test_js_divergence_examples():
    p = np.array([0.3, 0.2, 0.5])
    assert js_divergence(p, p) == 0.0
    assert abs(js_divergence(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
               - math.log(2)) < 1e-9
    rng = np.random.default_rng(0)
    for _ in range(25):
        a = rng.dirichlet(np.ones(5))
        b = rng.dirichlet(np.ones(5))
        assert abs(js_divergence(a, b) - js_divergence(b, a)) < 1e-12
        assert -1e-12 <= js_divergence(a, b) <= math.log(2) + 1e-12
    with pytest.raises(DomainError):
        js_divergence(np.array([1.0, 0.0]), np.array([1.0, 0.0, 0.0]))


def test_diversity_multiplier_schedule():
    assert diversity_multiplier(0) == 2.0
    assert diversity_multiplier(50) == 1.5
    assert diversity_multiplier(100) == 1.0
    assert diversity_multiplier(250) == 1.0


def test_diversity_score_uses_multiplier():
    p = np.array([0.9, 0.1])
    q = np.array([0.5, 0.5])
    js = js_divergence(p, q)
    assert abs(diversity_score(p, q, 0) - 2 * js) < 1e-12
    assert abs(diversity_score(p, q, 100) - js) < 1e-12


def test_momentum_factor():
    assert momentum_factor(2.0, 2.0) == 0.5  # no change -> exactly 1/2
    assert momentum_factor(None, 1.0) == 0.5  # insufficient history
    assert abs(momentum_factor(1.0, 0.8) - MOMENTUM_AT_0P2) < 1e-5
    # Sigmoid saturation at extreme relative changes.
    assert abs(momentum_factor(1.0, -1e9) - 1.5) < 1e-12
    assert abs(momentum_factor(1e-9, 1e9) - (-0.5)) < 1e-12
    with pytest.raises(DomainError):
        momentum_factor(0.0, 1.0)


def test_fairness_factor():
    assert fairness_factor(0, 5, 0.3) == 1.0
    assert abs(fairness_factor(4, 4, 0.3) - FAIRNESS_AT_MAX_ETA_0P3) < 1e-6
    assert all(fairness_factor(h, 9, 0.0) == 1.0 for h in range(10))
    assert fairness_factor(3, 0, 0.3) == 1.0  # round one: nobody penalized
    with pytest.raises(DomainError):
        fairness_factor(-1, 4, 0.3)


def test_staleness_factor():
    assert staleness_factor(5, 5, 0.7) == 1.0
    # Ages past the cap saturate.
    assert staleness_factor(30, 5, 0.7, 20) == staleness_factor(25, 5, 0.7, 20)
    assert abs(staleness_factor(10, 5, 0.7) - STALENESS_G0P7_D5) < 1e-5
    # Never selected counts as age t+1.
    assert staleness_factor(4, None, 0.7) == staleness_factor(5, 0, 0.7)
    with pytest.raises(DomainError):
        staleness_factor(3, 7, 0.7)


def test_norm_penalty():
    assert norm_penalty(0.0, 2.0, 0.5) == 1.0
    assert norm_penalty(None, 2.0, 0.5) == 1.0  # no recorded update
    assert norm_penalty(3.0, 0.0, 0.5) == 1.0  # cold-start average
    assert abs(norm_penalty(2.0, 2.0, 0.5) - NORM_R1_A0P5) < 1e-5
    assert abs(norm_penalty(1e12, 1.0, 0.3) - 0.7) < 1e-9  # saturation -> 1-alpha
    with pytest.raises(DomainError):
        norm_penalty(-1.0, 1.0, 0.5)


def _components(**kw) -> ScoreComponents:
    base = dict(info_value=0.5, diversity=0.3, momentum=0.5, fairness=1.0,
                staleness=1.0, norm_penalty=1.0)
    base.update(kw)
    return ScoreComponents(**base)


def test_compose_additive_neutral_factors_vanish():
    cfg = SelectorConfig()
    c = _components(info_value=0.7, diversity=0.4, momentum=0.9)
    assert abs(compose_score(c, cfg) - (0.7 + 0.4 + 0.9)) < 1e-12


def test_compose_additive_arithmetic():
    cfg = SelectorConfig()
    c = ScoreComponents(1.0, 0.2, 0.5, 0.8, 1.3, 0.9)
    assert abs(compose_score(c, cfg) - 1.7) < 1e-9


def test_compose_multiplicative_annihilator():
    cfg = SelectorConfig(composition="multiplicative")
    assert compose_score(_components(info_value=0.0), cfg) == 0.0


def test_dynamic_temperature_schedule():
    assert dynamic_temperature(0, 2.0) == 2.0
    assert dynamic_temperature(100, 2.0) == 1.0
    assert dynamic_temperature(250, 2.0) == 1.0
    with pytest.raises(DomainError):
        dynamic_temperature(1, 0.0)


def test_selection_probabilities():
    probs = selection_probabilities(np.zeros(5), 1.0)
    assert np.allclose(probs, 0.2)
    probs = selection_probabilities(np.array([0.0, math.log(2)]), 1.0)
    assert np.allclose(probs, [1 / 3, 2 / 3], atol=1e-9)
    probs = selection_probabilities(np.array([0.1, 0.7, 0.3]), 1e-6)
    assert probs[1] > 1 - 1e-9
    with pytest.raises(DomainError):
        selection_probabilities(np.array([1.0, np.inf]), 1.0)


def test_selection_probabilities_simplex_and_argmax_invariance():
    rng = np.random.default_rng(7)
    for _ in range(30):
        scores = rng.normal(scale=5.0, size=12)
        argmaxes = set()
        for tau in (0.05, 0.5, 1.0, 4.0):
            probs = selection_probabilities(scores, tau)
            assert abs(probs.sum() - 1.0) < 1e-9
            assert np.all(probs >= 0)
            argmaxes.add(int(np.argmax(probs)))
        assert len(argmaxes) == 1


def test_sample_subset_edges():
    rng = np.random.default_rng(0)
    assert np.array_equal(
        sample_subset(np.full(4, 0.25), 4, rng), np.arange(4)
    )
    assert np.array_equal(
        sample_subset(np.array([0.0, 1.0, 0.0]), 1, rng), [1]
    )
    with pytest.raises(ConfigError):
        sample_subset(np.full(3, 1 / 3), 4, rng)
    with pytest.raises(DomainError):
        sample_subset(np.array([0.9, 0.9]), 1, rng)


def test_sample_subset_deterministic():
    probs = np.array([0.4, 0.3, 0.2, 0.1])
    a = sample_subset(probs, 2, np.random.default_rng(11))
    b = sample_subset(probs, 2, np.random.default_rng(11))
    assert np.array_equal(a, b)


def test_sample_subset_single_draw_frequencies():
    probs = np.array([0.7, 0.2, 0.1])
    rng = np.random.default_rng(42)
    counts = np.zeros(3)
    draws = 100_000
    for _ in range(draws):
        counts[sample_subset(probs, 1, rng)[0]] += 1
    assert np.all(np.abs(counts / draws - probs) < 0.01)


def test_exploration_bound_uniform_case():
    for n in (2, 5, 12):
        b = exploration_lower_bound(1.3, 1.3, 0.0, 4, 0.8, n - 1)
        assert abs(b - 1 / n) < 1e-12


def test_exploration_bound_monotone_in_staleness():
    values = [
        exploration_lower_bound(0.0, 1.0, 0.7, age, 1.0, 11, 20)
        for age in range(20)
    ]
    assert all(a < b for a, b in zip(values, values[1:]))
    # Capped beyond the window.
    assert exploration_lower_bound(0.0, 1.0, 0.7, 25, 1.0, 11, 20) == values[-1] or \
        exploration_lower_bound(0.0, 1.0, 0.7, 20, 1.0, 11, 20) == \
        exploration_lower_bound(0.0, 1.0, 0.7, 99, 1.0, 11, 20)


def test_exploration_bound_frozen_value():
    b = exploration_lower_bound(0.0, 1.0, 0.7, 10, 1.0, 11, 20)
    assert abs(b - BOUND_EXAMPLE) < 1e-12
    assert 0.0 < b < 1.0


def test_compute_components_ranges_over_random_states():
    cfg = SelectorConfig()
    rng = np.random.default_rng(3)
    for trial in range(25):
        n = int(rng.integers(2, 10))
        round_index = int(rng.integers(0, 150))
        metadata = []
        for k in range(n):
            md = ClientMetadata(k)
            for r in range(int(rng.integers(0, 4))):
                md.loss_history.append((r, float(rng.uniform(0.01, 3.0))))
            if rng.random() < 0.7:
                md.participation_count = int(rng.integers(0, round_index + 1))
                if md.participation_count > 0:
                    md.last_selected_round = int(rng.integers(0, round_index + 1))
                    md.last_update_norm_sq = float(rng.uniform(0, 5))
            metadata.append(md)
        losses = rng.uniform(0.01, 3.0, size=n)
        dists = [rng.dirichlet(np.ones(4)) for _ in range(n)]
        avg = np.mean(dists, axis=0)
        for c in compute_components(metadata, losses, dists, avg, round_index, cfg):
            validate_components(c, cfg)


def test_validate_components_rejects_out_of_range():
    cfg = SelectorConfig()
    with pytest.raises(DomainError):
        validate_components(_components(info_value=1.2), cfg)
    with pytest.raises(DomainError):
        validate_components(_components(momentum=2.0), cfg)
    with pytest.raises(DomainError):
        validate_components(_components(staleness=0.5), cfg)


def test_selector_config_validation():
    with pytest.raises(ConfigError):
        SelectorConfig(base_temperature=0.0).validate()
    with pytest.raises(ConfigError):
        SelectorConfig(composition="averaged").validate()
    with pytest.raises(ConfigError):
        SelectorConfig(norm_alpha=1.5).validate()
    SelectorConfig().validate()
