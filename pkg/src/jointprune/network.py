"""Sequential network container with masked forward/backward passes.

The network owns its layers, their static weight masks, and (optionally) a
:class:`~jointprune.sparsity.WinnerRateConfig` describing which layer
outputs get a dynamic per-sample winner mask.  The final layer's output is
never masked.
"""

from __future__ import annotations

import numpy as np

from . import sparsity
from .errors import ConfigError, ShapeError
from .layers import LayerSpec, build_layer

WEIGHT_KINDS = ("fc", "conv2d")


class ForwardResult:
    """Per-layer activations from one forward pass.

    ``pre_mask[i]`` is layer i's raw output, ``post_mask[i]`` the output
    after the dynamic winner mask (the same array when layer i is
    unmasked).  ``logits`` is the final layer output.
    """

    __slots__ = ("pre_mask", "post_mask", "logits", "act_masks")

    def __init__(self, pre_mask, post_mask, act_masks):
        self.pre_mask = pre_mask
        self.post_mask = post_mask
        self.logits = post_mask[-1]
        self.act_masks = act_masks


class Network:
    def __init__(self, specs, input_shape, dtype=np.float32, seed=0):
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self.seed = seed
        self._skip_state = {}
        rng = np.random.default_rng(seed)
        self.layers = [build_layer(s, rng, self.dtype, self._skip_state) for s in self.specs]
        self.layer_shapes = self._resolve_shapes()
        self.mask_cfg = None

    def _resolve_shapes(self):
        shapes = []
        cur = self.input_shape
        skip_shapes = {}
        for i, (spec, layer) in enumerate(zip(self.specs, self.layers)):
            try:
                if spec.kind == "skip_save":
                    skip_shapes[spec.geometry["tag"]] = cur
                elif spec.kind == "skip_add":
                    tag = spec.geometry["tag"]
                    if skip_shapes.get(tag) != cur:
                        raise ShapeError(
                            f"skip branch {tag!r} shape {skip_shapes.get(tag)} != {cur}"
                        )
                cur = layer.out_shape(cur)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({spec.kind}): {e}") from None
            shapes.append(cur)
        return shapes

    # -- masks ------------------------------------------------------------

    def set_mask_cfg(self, cfg):
        """Attach a winner-rate config; the output layer must stay unmasked."""
        if cfg is not None:
            last = len(self.layers) - 1
            for idx in cfg.per_layer_rate:
                if not 0 <= idx < len(self.layers):
                    raise ConfigError(f"masked layer index {idx} out of range")
                if idx == last:
                    raise ConfigError("the final layer output must not carry an activation mask")
        self.mask_cfg = cfg

    def weight_params(self):
        """(layer_index, param) pairs for the fc/conv weight matrices."""
        return [
            (i, layer.params[0])
            for i, layer in enumerate(self.layers)
            if layer.kind in WEIGHT_KINDS
        ]

    def params(self):
        return [p for layer in self.layers for p in layer.params]

    def weight_density(self):
        kept = total = 0
        for _, p in self.weight_params():
            total += p.value.size
            kept += p.value.size if p.mask is None else int(p.mask.sum())
        return kept / total

    # -- passes -----------------------------------------------------------

    def _dynamic_mask(self, i, acts):
        cfg = self.mask_cfg
        if cfg is None:
            return None
        rate = cfg.rate_for(i)
        if rate is None or rate >= 1.0:
            return None
        if cfg.selection_mode == sparsity.PREDICTED_THRESHOLD:
            n = acts[0].size
            offset = (cfg.offset_seed + i) % max(1, int(1.0 / cfg.downsample_rate))
            return sparsity.predicted_mask_batch(acts, rate, cfg.downsample_rate, offset)
        return sparsity.select_winners_batch(acts, rate)

    def forward(self, x, mode="eval", rng=None):
        """Run all layers; returns a :class:`ForwardResult`.

        In train mode dropout is active (requires ``rng``); in eval mode it
        is an identity.  Dynamic winner masks apply in both modes whenever
        a mask config is attached.
        """
        if mode not in ("train", "eval"):
            raise ConfigError(f"forward mode must be train or eval, got {mode!r}")
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(
                f"input shape {x.shape[1:]} does not match network input {self.input_shape}"
            )
        train = mode == "train"
        pre, post, act_masks = [], [], [None] * len(self.layers)
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, train=train, rng=rng)
            except (ValueError, ShapeError) as e:
                raise ShapeError(f"layer {i} ({layer.kind}): {e}") from None
            pre.append(x)
            t = self._dynamic_mask(i, x)
            if t is not None:
                act_masks[i] = t
                x = x * t
            post.append(x)
        self._act_masks = act_masks
        return ForwardResult(pre, post, act_masks)

    def backward(self, dlogits):
        """Backpropagate from the logits; fills every param's grad buffer.

        Gradients crossing a masked layer output are multiplied by that
        layer's winner mask, and gradients of statically masked-out weights
        are forced to exact zero.
        """
        dout = dlogits
        for i in range(len(self.layers) - 1, -1, -1):
            t = self._act_masks[i]
            if t is not None:
                dout = dout * t
            dout = self.layers[i].backward(dout)
        for p in self.params():
            if p.mask is not None:
                p.grad *= p.mask
        return dout


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch plus the logits gradient."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise ConfigError(f"labels out of class range [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    return float(loss), dlogits / n


def l1_penalty(net, alpha):
    """alpha * sum|w| over surviving weights (biases excluded)."""
    if alpha == 0.0:
        return 0.0
    total = 0.0
    for _, p in net.weight_params():
        w = p.value if p.mask is None else p.value * p.mask
        total += np.abs(w).sum()
    return float(alpha * total)


def loss_and_backward(net, x, labels, alpha=0.0, rng=None, mode="train"):
    """Forward in ``mode``, then full backward with the l1 weight term.

    Returns ``(total_loss, ce_loss, l1_loss, result)``; the reported total
    is exactly ce + l1.  Gradients land in the params' grad buffers.
    """
    result = net.forward(x, mode=mode, rng=rng)
    ce, dlogits = softmax_cross_entropy(result.logits, labels)
    net.backward(dlogits)
    l1 = l1_penalty(net, alpha)
    if alpha:
        for _, p in net.weight_params():
            g = alpha * np.sign(p.value)
            if p.mask is not None:
                g *= p.mask
            p.grad += g.astype(p.grad.dtype)
    return ce + l1, ce, l1, result
