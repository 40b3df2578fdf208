"""Winner selection, predicted thresholds and magnitude weight masks,
checked against a full-sort oracle."""

import numpy as np
import pytest

from jointprune.errors import ConfigError, ShapeError
from jointprune.sparsity import (
    ActivationMask,
    WinnerRateConfig,
    apply_activation_mask,
    predict_threshold,
    predicted_mask_batch,
    prune_weights_by_magnitude,
    select_winners_batch,
    select_winners_exact,
    threshold_for_target_density,
    winner_count,
)

from oracles import topk_fullsort


def test_winner_count_values():
    assert winner_count(1.0, 7) == 7
    assert winner_count(0.1, 1000) == 100
    assert winner_count(0.12, 300) == 36
    assert winner_count(0.001, 5) == 1  # clipped up to 1
    assert winner_count(0.25, 10) == 3  # ceil(2.5)
    assert winner_count(0.9999, 10) == 10


def test_rate_one_keeps_everything(rng):
    acts = rng.standard_normal(50)
    m = select_winners_exact(acts, 1.0)
    assert isinstance(m, ActivationMask)
    assert m.winner_count == 50
    assert np.array_equal(m.mask, np.ones(50))


def test_documented_example():
    m = select_winners_exact(np.array([3.0, -5.0, 1.0, 0.5]), 0.5)
    assert np.array_equal(m.mask, [1.0, 1.0, 0.0, 0.0])
    assert m.winner_count == 2


def test_matches_fullsort_oracle_with_ties():
    for trial in range(1000):
        rng = np.random.default_rng(trial)
        n = int(rng.integers(10, 600))
        # quantize to force plenty of tied magnitudes
        acts = np.round(rng.standard_normal(n), 1)
        rate = float(rng.uniform(0.05, 0.9))
        m = select_winners_exact(acts, rate)
        got = set(np.flatnonzero(m.mask.reshape(-1)).tolist())
        assert got == topk_fullsort(acts, m.winner_count), f"trial {trial}"


def test_magnitude_dominance(rng):
    acts = rng.standard_normal((4, 7, 9))
    m = select_winners_exact(acts, 0.3)
    mag = np.abs(acts)
    kept = mag[m.mask > 0]
    dropped = mag[m.mask == 0]
    assert kept.min() >= dropped.max()


def test_scale_equivariance(rng):
    acts = rng.standard_normal(200)
    base = select_winners_exact(acts, 0.2).mask
    for c in (3.0, -2.0, 1e-6):
        assert np.array_equal(select_winners_exact(c * acts, 0.2).mask, base)


def test_batch_rows_match_single(rng):
    acts = rng.standard_normal((6, 3, 5, 5))
    batch = select_winners_batch(acts, 0.25)
    for i in range(6):
        single = select_winners_exact(acts[i], 0.25)
        assert np.array_equal(batch[i], single.mask)


def test_tie_break_prefers_lowest_index():
    acts = np.array([2.0, -2.0, 2.0, 1.0])
    m = select_winners_exact(acts, 0.5)  # k = 2, three tied at |2|
    assert np.array_equal(m.mask, [1.0, 1.0, 0.0, 0.0])


def test_predict_threshold_eps_one_is_exact(rng):
    acts = rng.standard_normal(500)
    rate = 0.2
    k = winner_count(rate, 500)
    theta = predict_threshold(acts, rate, 1.0)
    assert theta == np.sort(np.abs(acts))[::-1][k - 1]
    # strict |a| > theta keeps the exact winners except values tied at theta
    exact = select_winners_exact(acts, rate).mask.astype(bool)
    predicted = np.abs(acts) > theta
    assert not np.any(predicted & ~exact)
    assert np.all(np.abs(acts[exact & ~predicted]) == theta)


def test_predicted_counts_within_20pct(rng):
    """Uniform acts, N=1e4, rate 0.1, eps 0.1: count in [0.8k, 1.2k] on
    at least 95 of 100 trials."""
    n, rate, eps = 10_000, 0.1, 0.1
    k = winner_count(rate, n)
    hits = 0
    for trial in range(100):
        acts = rng.uniform(-1.0, 1.0, size=(1, n))
        mask = predicted_mask_batch(acts, rate, eps, offset=trial % 10)
        realized = int(mask.sum())
        if 0.8 * k <= realized <= 1.2 * k:
            hits += 1
    assert hits >= 95, f"only {hits}/100 trials within tolerance"


def test_predicted_constant_tensor_masks_to_empty():
    acts = np.full((1, 100), 0.7)
    mask = predicted_mask_batch(acts, 0.2, 0.5)
    assert mask.sum() == 0  # strict > comparison: all-equal masks to empty


def test_predicted_mask_deterministic(rng):
    acts = rng.standard_normal((3, 400))
    a = predicted_mask_batch(acts, 0.15, 0.1, offset=4)
    b = predicted_mask_batch(acts, 0.15, 0.1, offset=4)
    assert np.array_equal(a, b)
    # a different offset picks a different subsample (thresholds may differ)
    theta_a = predict_threshold(acts[0], 0.15, 0.1, offset=0)
    assert isinstance(theta_a, float)


def test_apply_activation_mask(rng):
    acts = rng.standard_normal((2, 8))
    m = select_winners_batch(acts, 0.5)
    out = apply_activation_mask(acts, m)
    assert np.array_equal(out[m > 0], acts[m > 0])
    assert np.all(out[m == 0] == 0.0)
    with pytest.raises(ShapeError):
        apply_activation_mask(acts, np.ones((2, 9)))


# -- weight masks -----------------------------------------------------------


def test_prune_threshold_zero_keeps_nonzero():
    w = np.array([0.0, -0.3, 0.0, 1.0])
    assert np.array_equal(prune_weights_by_magnitude(w, 0.0), [0, 1, 0, 1])


def test_prune_documented_example():
    w = np.array([0.1, -0.5, 0.02])
    assert np.array_equal(prune_weights_by_magnitude(w, 0.05), [1, 1, 0])


def test_prune_monotone_in_threshold(rng):
    w = rng.standard_normal(300)
    prev = prune_weights_by_magnitude(w, 0.0)
    for t in (0.1, 0.5, 1.0, 2.0):
        cur = prune_weights_by_magnitude(w, t)
        assert np.all(cur <= prev)  # larger threshold => subset mask
        prev = cur


def test_quantile_threshold_density(rng):
    w = rng.standard_normal(1000)
    for target in (0.05, 0.1, 0.33, 0.6, 0.95):
        t = threshold_for_target_density(w, target)
        mask = prune_weights_by_magnitude(w, t)
        assert abs(mask.mean() - target) <= 1.0 / len(w)
    assert threshold_for_target_density(w, 1.0) == 0.0


def test_quantile_threshold_with_ties():
    w = np.array([0.5] * 10 + [2.0] * 10)
    t = threshold_for_target_density(w, 0.5)
    mask = prune_weights_by_magnitude(w, t)
    assert mask.sum() == 10
    assert np.all(mask[10:] == 1)


# -- validation -------------------------------------------------------------


def test_bad_inputs_raise():
    with pytest.raises(ConfigError):
        select_winners_exact(np.ones(4), 0.0)
    with pytest.raises(ConfigError):
        select_winners_exact(np.ones(4), 1.5)
    with pytest.raises(ShapeError):
        select_winners_exact(np.empty(0), 0.5)
    with pytest.raises(ConfigError):
        predict_threshold(np.ones(5), 0.5, 0.01)  # eps*N < 1
    with pytest.raises(ConfigError):
        prune_weights_by_magnitude(np.ones(3), -0.1)
    with pytest.raises(ConfigError):
        threshold_for_target_density(np.ones(3), 0.0)
    with pytest.raises(ConfigError):
        WinnerRateConfig(per_layer_rate={1: 1.2})
    with pytest.raises(ConfigError):
        WinnerRateConfig(downsample_rate=0.0)
    with pytest.raises(ConfigError):
        WinnerRateConfig(selection_mode="nope")


def test_config_with_rates_preserves_setup():
    cfg = WinnerRateConfig(per_layer_rate={2: 0.3}, downsample_rate=0.1,
                           selection_mode="predicted_threshold", offset_seed=9)
    new = cfg.with_rates({4: 0.5})
    assert new.per_layer_rate == {4: 0.5}
    assert new.downsample_rate == 0.1
    assert new.selection_mode == "predicted_threshold"
    assert new.offset_seed == 9
    assert cfg.rate_for(2) == 0.3 and cfg.rate_for(7) is None
