"""Forward-pass examples, conv/pool naive-loop oracles and finite-difference
gradient checks for every layer kind."""

import numpy as np
import pytest

from jointprune import layers as L
from jointprune.errors import ShapeError
from jointprune.network import Network, loss_and_backward
from jointprune.sparsity import WinnerRateConfig

from oracles import avgpool_naive, central_diff_grad, conv2d_naive, maxpool_naive


def test_fc_identity():
    net = Network([L.flatten(), L.fc(6, 6)], (6,) if False else (1, 2, 3), dtype=np.float64)
    net.layers[1].w.value = np.eye(6)
    net.layers[1].b.value = np.zeros(6)
    v = np.arange(6, dtype=np.float64).reshape(1, 1, 2, 3)
    out = net.forward(v).logits
    assert np.array_equal(out, v.reshape(1, 6))


def test_leaky_relu_values():
    layer = L.build_layer(L.leaky_relu(0.1), None, np.float64, {})
    out = layer.forward(np.array([[-1.0, 2.0]]))
    assert np.allclose(out, [[-0.1, 2.0]])


def test_relu_values():
    layer = L.build_layer(L.relu(), None, np.float64, {})
    out = layer.forward(np.array([[-1.0, 0.0, 2.0]]))
    assert np.array_equal(out, [[0.0, 0.0, 2.0]])


def test_conv_constant_input():
    net = Network([L.conv2d(1, 1, 3, stride=1, pad=0)], (1, 5, 5), dtype=np.float64)
    net.layers[0].w.value = np.ones((1, 1, 3, 3))
    net.layers[0].b.value = np.zeros(1)
    out = net.forward(np.ones((1, 1, 5, 5))).logits
    assert out.shape == (1, 1, 3, 3)
    assert np.array_equal(out, np.full((1, 1, 3, 3), 9.0))


def test_conv_random_matches_naive(rng):
    for _ in range(10):
        cin, cout = rng.integers(1, 4, size=2)
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        h = int(rng.integers(k + 1, 9))
        net = Network([L.conv2d(int(cin), int(cout), k, stride=stride, pad=pad)],
                      (int(cin), h, h), dtype=np.float64)
        x = rng.standard_normal((2, int(cin), h, h))
        out = net.forward(x).logits
        ref = conv2d_naive(x, net.layers[0].w.value, net.layers[0].b.value, stride, pad)
        assert np.allclose(out, ref, rtol=1e-12, atol=1e-13)


def test_conv_and_pool_match_naive_100_geometries(rng):
    """Optimized kernels vs nested-loop reference on random geometries."""
    for trial in range(100):
        kind = trial % 3
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        c = int(rng.integers(1, 4))
        h = int(rng.integers(max(2, k + 1), 10))
        x = rng.standard_normal((2, c, h, h))
        if kind == 0:
            cout = int(rng.integers(1, 4))
            net = Network([L.conv2d(c, cout, k, stride=stride, pad=pad)], (c, h, h),
                          dtype=np.float64)
            ref = conv2d_naive(x, net.layers[0].w.value, net.layers[0].b.value, stride, pad)
        elif kind == 1:
            net = Network([L.maxpool(k, stride, pad=pad)], (c, h, h), dtype=np.float64)
            ref = maxpool_naive(x, k, stride, pad)
        else:
            net = Network([L.avgpool(k, stride, pad=pad)], (c, h, h), dtype=np.float64)
            ref = avgpool_naive(x, k, stride, pad)
        out = net.forward(x).logits
        assert np.allclose(out, ref, rtol=1e-12, atol=1e-13), f"trial {trial}"


def test_forward_determinism(rng):
    net = Network([L.conv2d(1, 4, 3, 1, 1), L.relu(), L.maxpool(2, 2),
                   L.flatten(), L.fc(64, 10)], (1, 8, 8))
    net.set_mask_cfg(WinnerRateConfig(per_layer_rate={1: 0.3}))
    x = rng.standard_normal((4, 1, 8, 8)).astype(np.float32)
    a = net.forward(x, mode="eval").logits
    b = net.forward(x, mode="eval").logits
    assert np.array_equal(a, b)


def test_mask_absorption(rng):
    """forward(w, mask m) == forward(w*m, all-ones mask)."""
    net = Network([L.flatten(), L.fc(12, 8), L.relu(), L.fc(8, 4)], (1, 3, 4),
                  dtype=np.float64)
    x = rng.standard_normal((3, 1, 3, 4))
    for _, p in net.weight_params():
        p.set_mask((rng.random(p.value.shape) > 0.4).astype(np.float64))
    masked_out = net.forward(x).logits

    net2 = Network([L.flatten(), L.fc(12, 8), L.relu(), L.fc(8, 4)], (1, 3, 4),
                   dtype=np.float64)
    for (_, p), (_, q) in zip(net.weight_params(), net2.weight_params()):
        q.value = p.value * p.mask
        q.set_mask(np.ones_like(q.value))
    for la, lb in zip(net.layers, net2.layers):
        if la.kind in ("fc", "conv2d"):
            lb.params[1].value = la.params[1].value.copy()
    assert np.array_equal(masked_out, net2.forward(x).logits)


def test_shape_error_names_layer():
    net = Network([L.flatten(), L.fc(10, 4)], (1, 2, 5))
    with pytest.raises(ShapeError, match="input shape"):
        net.forward(np.zeros((1, 1, 3, 3), dtype=np.float32))
    with pytest.raises(ShapeError, match="layer 1"):
        Network([L.flatten(), L.fc(11, 4)], (1, 2, 5))


# -- gradient checks --------------------------------------------------------


def _grad_check(net, x, labels, tol=1e-4, n_sample=40, seed=0, mask_cfg=None):
    if mask_cfg is not None:
        net.set_mask_cfg(mask_cfg)
    _, _, _, _ = loss_and_backward(net, x, labels, alpha=0.0, mode="train")
    analytic = {id(p): p.grad.copy() for p in net.params()}
    pick = np.random.default_rng(seed)

    def f():
        res = net.forward(x, mode="train")
        from jointprune.network import softmax_cross_entropy

        return softmax_cross_entropy(res.logits, labels)[0]

    for p in net.params():
        flat_idx = np.arange(p.value.size)
        if p.value.size > n_sample:
            flat_idx = pick.choice(p.value.size, size=n_sample, replace=False)
        indices = [np.unravel_index(i, p.value.shape) for i in flat_idx]
        fd = central_diff_grad(f, p, indices)
        got = np.array([analytic[id(p)][i] for i in indices])
        denom = np.maximum(np.abs(fd), 1e-3)
        assert np.max(np.abs(got - fd) / denom) < tol, p.name


def test_gradients_per_kind_exhaustive(rng):
    """One small net per layer kind, every parameter element checked."""
    cases = {
        "fc": [L.flatten(), L.fc(8, 5)],
        "conv2d": [L.conv2d(2, 3, 3, 1, 1), L.flatten(), L.fc(48, 5)],
        "maxpool": [L.conv2d(1, 2, 3, 1, 1), L.maxpool(2, 2), L.flatten(), L.fc(8, 5)],
        "avgpool": [L.conv2d(1, 2, 3, 1, 1), L.avgpool(2, 2), L.flatten(), L.fc(8, 5)],
        "relu": [L.flatten(), L.fc(8, 8), L.relu(), L.fc(8, 5)],
        "leaky_relu": [L.flatten(), L.fc(8, 8), L.leaky_relu(0.2), L.fc(8, 5)],
        "skip": [L.conv2d(1, 2, 3, 1, 1), L.skip_save(), L.conv2d(2, 2, 3, 1, 1),
                 L.leaky_relu(0.1), L.skip_add(), L.flatten(), L.fc(8, 5)],
    }
    for name, specs in cases.items():
        if name in ("fc", "relu", "leaky_relu"):
            shape = (1, 2, 4)
        elif name == "conv2d":
            shape = (2, 4, 4)
        else:
            shape = (1, 4, 4) if name != "skip" else (1, 2, 2)
        net = Network(specs, shape, dtype=np.float64, seed=7)
        x = rng.standard_normal((3,) + shape)
        labels = rng.integers(0, 5, size=3)
        _grad_check(net, x, labels, n_sample=10_000)


def test_gradients_50_random_instances():
    """Random mixed-kind nets, sampled parameter elements, fd rel err < 1e-4."""
    for trial in range(50):
        rng = np.random.default_rng(1000 + trial)
        use_conv = trial % 2 == 0
        act = L.relu if trial % 3 else (lambda: L.leaky_relu(0.1))
        if use_conv:
            c = int(rng.integers(1, 3))
            specs = [L.conv2d(c, 3, 3, 1, 1), act()]
            if trial % 4 == 0:
                specs.append(L.maxpool(2, 2))
                n_flat = 3 * 3 * 3
            elif trial % 4 == 2:
                specs.append(L.avgpool(2, 2))
                n_flat = 3 * 3 * 3
            else:
                n_flat = 3 * 6 * 6
            specs += [L.flatten(), L.fc(n_flat, 4)]
            shape = (c, 6, 6)
        else:
            specs = [L.flatten(), L.fc(12, 9), act(), L.fc(9, 4)]
            shape = (1, 3, 4)
        net = Network(specs, shape, dtype=np.float64, seed=trial)
        x = rng.standard_normal((2,) + shape)
        labels = rng.integers(0, 4, size=2)
        _grad_check(net, x, labels, n_sample=30, seed=trial)


def test_gradients_with_activation_mask():
    """Backprop through a dynamic winner mask matches fd of the masked loss."""
    rng = np.random.default_rng(5)
    net = Network([L.flatten(), L.fc(12, 10), L.leaky_relu(0.1), L.fc(10, 4)],
                  (1, 3, 4), dtype=np.float64, seed=3)
    x = rng.standard_normal((2, 1, 3, 4))
    labels = np.array([0, 2])
    _grad_check(net, x, labels, n_sample=10_000,
                mask_cfg=WinnerRateConfig(per_layer_rate={2: 0.4}))


def test_dropout_backward_uses_forward_mask(rng):
    layer = L.build_layer(L.dropout(0.4), None, np.float32, {})
    x = rng.standard_normal((5, 20)).astype(np.float32)
    out = layer.forward(x, train=True, rng=np.random.default_rng(9))
    scale = layer._scale_mask
    assert np.array_equal(out, x * scale)
    dout = rng.standard_normal((5, 20)).astype(np.float32)
    assert np.array_equal(layer.backward(dout), dout * scale)
    # eval mode is a pure identity
    assert layer.forward(x, train=False) is x
