"""Network-level loss, masking and validation behaviour."""

import numpy as np
import pytest

from jointprune import layers as L
from jointprune.errors import ConfigError
from jointprune.network import (
    Network,
    l1_penalty,
    loss_and_backward,
    softmax_cross_entropy,
)
from jointprune.sparsity import WinnerRateConfig


def test_uniform_logits_loss_is_log_c():
    for c in (2, 5, 10):
        logits = np.zeros((4, c))
        loss, dlogits = softmax_cross_entropy(logits, np.zeros(4, dtype=int))
        assert np.isclose(loss, np.log(c))
        # gradient rows sum to zero and are (p - onehot)/n
        assert np.allclose(dlogits.sum(axis=1), 0.0, atol=1e-12)


def test_softmax_is_shift_invariant(rng):
    logits = rng.standard_normal((6, 7))
    labels = rng.integers(0, 7, size=6)
    l1, d1 = softmax_cross_entropy(logits, labels)
    l2, d2 = softmax_cross_entropy(logits + 1000.0, labels)
    assert np.isclose(l1, l2)
    assert np.allclose(d1, d2, atol=1e-12)


def test_label_out_of_range():
    logits = np.zeros((2, 3))
    with pytest.raises(ConfigError, match="class range"):
        softmax_cross_entropy(logits, np.array([0, 3]))
    with pytest.raises(ConfigError):
        softmax_cross_entropy(logits, np.array([-1, 0]))


def test_masked_weight_grads_exactly_zero(rng):
    net = Network([L.flatten(), L.fc(12, 8), L.relu(), L.fc(8, 4)], (1, 3, 4),
                  dtype=np.float64)
    x = rng.standard_normal((5, 1, 3, 4))
    labels = rng.integers(0, 4, size=5)
    for _, p in net.weight_params():
        p.set_mask((rng.random(p.value.shape) > 0.5).astype(np.float64))
    loss_and_backward(net, x, labels, alpha=1e-3)
    for _, p in net.weight_params():
        assert np.all(p.grad[p.mask == 0] == 0.0)
        assert np.any(p.grad[p.mask == 1] != 0.0)


def test_loss_decomposition(rng):
    net = Network([L.flatten(), L.fc(12, 4)], (1, 3, 4), dtype=np.float64)
    x = rng.standard_normal((3, 1, 3, 4))
    labels = rng.integers(0, 4, size=3)
    total, ce, l1, _ = loss_and_backward(net, x, labels, alpha=0.01)
    assert total == ce + l1
    w = net.layers[1].w.value
    assert np.isclose(l1, 0.01 * np.abs(w).sum())
    # alpha=0 drops the penalty term entirely
    total0, ce0, l10, _ = loss_and_backward(net, x, labels, alpha=0.0)
    assert l10 == 0.0 and total0 == ce0
    assert l1_penalty(net, 0.0) == 0.0


def test_l1_counts_only_surviving_weights():
    net = Network([L.flatten(), L.fc(4, 2)], (1, 2, 2), dtype=np.float64)
    p = net.layers[1].w
    p.value = np.ones((4, 2))
    mask = np.zeros((4, 2))
    mask[:2] = 1.0
    p.set_mask(mask)
    assert np.isclose(l1_penalty(net, 0.5), 0.5 * 4)


def test_final_layer_mask_rejected():
    net = Network([L.flatten(), L.fc(6, 3)], (1, 2, 3))
    with pytest.raises(ConfigError, match="final layer"):
        net.set_mask_cfg(WinnerRateConfig(per_layer_rate={1: 0.5}))
    with pytest.raises(ConfigError, match="out of range"):
        net.set_mask_cfg(WinnerRateConfig(per_layer_rate={5: 0.5}))
    net.set_mask_cfg(WinnerRateConfig(per_layer_rate={0: 0.5}))  # ok


def test_forward_result_bookkeeping(rng):
    net = Network([L.flatten(), L.fc(10, 8), L.relu(), L.fc(8, 3)], (1, 2, 5),
                  dtype=np.float64)
    net.set_mask_cfg(WinnerRateConfig(per_layer_rate={2: 0.25}))
    x = rng.standard_normal((4, 1, 2, 5))
    res = net.forward(x)
    assert len(res.pre_mask) == len(res.post_mask) == 4
    t = res.act_masks[2]
    assert t is not None and t.shape == (4, 8)
    assert np.all(t.sum(axis=1) == 2)  # ceil(0.25 * 8)
    assert np.array_equal(res.post_mask[2], res.pre_mask[2] * t)
    # unmasked layers pass through untouched
    assert res.post_mask[1] is res.pre_mask[1]
    assert res.logits is res.post_mask[-1]


def test_rate_one_layer_is_unmasked(rng):
    net = Network([L.flatten(), L.fc(6, 4), L.fc(4, 2)], (1, 2, 3))
    net.set_mask_cfg(WinnerRateConfig(per_layer_rate={1: 1.0}))
    res = net.forward(rng.standard_normal((2, 1, 2, 3)).astype(np.float32))
    assert res.act_masks[1] is None


def test_weight_density(rng):
    net = Network([L.flatten(), L.fc(10, 10), L.relu(), L.fc(10, 10)], (1, 2, 5))
    assert net.weight_density() == 1.0
    mask = np.zeros((10, 10))
    mask[:3] = 1.0
    net.layers[1].w.set_mask(mask)
    assert np.isclose(net.weight_density(), (30 + 100) / 200)
