"""The three-step joint pruning procedure: sensitivity analysis, joint
regularization, masked finetuning — plus dense baseline training, dropout
reconciliation and the evaluation helpers used for reporting.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError
from .metrics import SparsityStats
from .network import loss_and_backward
from .optim import make_optimizer
from .sparsity import WinnerRateConfig, prune_weights_by_magnitude, threshold_for_target_density

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    optimizer: str = "adadelta"
    lr: float = 1.0                 # original-model learning rate
    momentum: float = 0.9           # sgd only
    rho: float = 0.95               # adadelta only
    eps: float = 1e-6
    l1_strength: float = 1e-5       # alpha
    lr_scale: float = 0.1           # warm-up lr multiplier vs original
    adadelta_lr: float = 0.1        # pruning-phase adadelta lr
    baseline_epochs: int = 20
    warmup_epochs: int = 1
    finetune_epochs: int = 10
    prune_ramp_epochs: int = 4
    batch_size: int = 100
    base_dropout: float | None = None  # None -> use the model preset's value
    weight_target_density: dict | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.01 <= self.lr_scale <= 1.0:
            raise ConfigError(f"lr_scale must be in [0.01, 1], got {self.lr_scale}")
        for name in ("baseline_epochs", "warmup_epochs", "finetune_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.base_dropout is not None and not 0.0 <= self.base_dropout < 1.0:
            raise ConfigError(f"base_dropout must be in [0,1), got {self.base_dropout}")


@dataclass
class SensitivityCurve:
    """Per-layer (winner_rate, accuracy_drop) points vs the dense baseline."""

    baseline_accuracy: float
    points: dict = field(default_factory=dict)  # layer index -> [(rate, drop)]


def minibatches(n, batch_size, rng=None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _make_opt(cfg, params, lr):
    if cfg.optimizer == "sgd":
        return make_optimizer("sgd", params, lr=lr, momentum=cfg.momentum)
    return make_optimizer("adadelta", params, lr=lr, rho=cfg.rho, eps=cfg.eps)


def run_epoch(net, opt, split, cfg, rng, alpha=0.0):
    """One pass over the split; returns (mean_total, mean_ce, mean_l1)."""
    totals = np.zeros(3)
    batches = 0
    for idx in minibatches(len(split), cfg.batch_size, rng):
        total, ce, l1, _ = loss_and_backward(
            net, split.images[idx], split.labels[idx], alpha=alpha, rng=rng, mode="train"
        )
        if not math.isfinite(total):
            raise DivergenceError(f"loss became non-finite ({total})")
        opt.step()
        totals += (total, ce, l1)
        batches += 1
    return tuple(totals / max(1, batches))


def accuracy(net, split, batch_size=500):
    correct = 0
    for idx in minibatches(len(split), batch_size):
        logits = net.forward(split.images[idx], mode="eval").logits
        correct += int((logits.argmax(axis=1) == split.labels[idx]).sum())
    return correct / len(split)


def evaluate(net, split, mode="jp", stat_layers=None, batch_size=500):
    """Top-1 accuracy plus measured activation sparsity.

    ``mode``: ``dense`` and ``wp_only`` run without activation masks (the
    weight masks baked into the params still apply); ``jp`` uses the net's
    winner-rate config.  Stats cover ``stat_layers`` (default: the masked
    layers) plus the final output, so the same tensors are compared across
    modes.
    """
    if mode not in ("dense", "wp_only", "jp"):
        raise ConfigError(f"unknown eval mode {mode!r}")
    saved_cfg = net.mask_cfg
    if mode in ("dense", "wp_only"):
        net.mask_cfg = None
    if mode == "jp" and saved_cfg is None:
        raise ConfigError("jp mode requires a winner-rate config on the network")
    if stat_layers is None:
        stat_layers = sorted(saved_cfg.per_layer_rate) if saved_cfg else []
    last = len(net.layers) - 1
    layers = [i for i in stat_layers if i != last] + [last]
    try:
        correct = 0
        nnz = {i: 0 for i in layers}
        sizes = {i: 0 for i in layers}
        for idx in minibatches(len(split), batch_size):
            result = net.forward(split.images[idx], mode="eval")
            correct += int((result.logits.argmax(axis=1) == split.labels[idx]).sum())
            for i in layers:
                a = result.post_mask[i]
                nnz[i] += int(np.count_nonzero(a))
                sizes[i] += a.size
    finally:
        net.mask_cfg = saved_cfg
    stats = SparsityStats(
        per_layer=[(i, sizes[i] // len(split), nnz[i] / sizes[i]) for i in layers]
    )
    return correct / len(split), stats


def train_dense(net, cfg, train_split, val_split=None, epochs=None):
    """Plain baseline training: no masks, no l1 term."""
    epochs = cfg.baseline_epochs if epochs is None else epochs
    rng = np.random.default_rng(cfg.seed)
    opt = _make_opt(cfg, net.params(), cfg.lr)
    history = []
    for epoch in range(epochs):
        total, ce, l1 = run_epoch(net, opt, train_split, cfg, rng)
        row = {"phase": "dense", "epoch": epoch, "loss": total, "ce": ce, "l1": l1,
               "weight_density": net.weight_density()}
        if val_split is not None:
            row["val_acc"] = accuracy(net, val_split)
        history.append(row)
    return history


# -- step 1: sensitivity ----------------------------------------------------


def sensitivity_sweep(net, val_split, rates, layers):
    """Accuracy drop per layer over candidate winner rates.

    Each layer is masked alone (all others untouched); no parameters are
    modified.  The drop at rate 1.0 is zero by construction.
    """
    if len(rates) == 0 or len(val_split) == 0:
        raise ConfigError("sensitivity sweep needs a non-empty rate grid and split")
    saved_cfg = net.mask_cfg
    net.mask_cfg = None
    try:
        base = accuracy(net, val_split)
        curve = SensitivityCurve(baseline_accuracy=base)
        for layer in layers:
            pts = []
            for rate in sorted(rates):
                if rate >= 1.0:
                    pts.append((1.0, 0.0))
                    continue
                net.mask_cfg = WinnerRateConfig(per_layer_rate={layer: rate})
                acc = accuracy(net, val_split)
                net.mask_cfg = None
                pts.append((rate, base - acc))
            curve.points[layer] = pts
    finally:
        net.mask_cfg = saved_cfg
    return curve


def choose_winner_rates(curve, tolerable_drop, template=None):
    """Smallest rate per layer whose measured drop stays within tolerance.

    Layers whose whole curve exceeds the tolerance fall back to rate 1.0
    with a warning.  Returns a :class:`WinnerRateConfig`.
    """
    rates = {}
    for layer, pts in curve.points.items():
        chosen = None
        for rate, drop in pts:  # sorted ascending: first hit is the smallest
            if drop <= tolerable_drop:
                chosen = rate
                break
        if chosen is None:
            log.warning("layer %d: no winner rate within drop %.4f, keeping 1.0",
                        layer, tolerable_drop)
            chosen = 1.0
        rates[layer] = chosen
    cfg = template or WinnerRateConfig()
    return cfg.with_rates({k: v for k, v in rates.items() if v < 1.0})


# -- step 2/3: joint regularization + masked finetuning ---------------------


def adjust_dropout(base_rate, winner_rate):
    """Dropout rate scaled by the square root of the layer's winner rate."""
    if not 0.0 <= base_rate < 1.0:
        raise ConfigError(f"base dropout must be in [0,1), got {base_rate}")
    if not 0.0 < winner_rate <= 1.0:
        raise ConfigError(f"winner rate must be in (0,1], got {winner_rate}")
    return base_rate * math.sqrt(winner_rate)


_TRANSPARENT = {"relu", "leaky_relu", "flatten", "maxpool", "avgpool",
                "dropout", "skip_save", "skip_add"}


def reconcile_dropout(net, mask_cfg, base_dropout):
    """Set each dropout layer's rate to C_d * sqrt(rate of the mask it follows)."""
    for j, spec in enumerate(net.specs):
        if spec.kind != "dropout":
            continue
        rate = None
        i = j - 1
        while i >= 0 and net.specs[i].kind in _TRANSPARENT:
            if i in mask_cfg.per_layer_rate:
                rate = mask_cfg.per_layer_rate[i]
                break
            i -= 1
        spec.geometry["rate"] = adjust_dropout(base_dropout, rate if rate else 1.0)


def prune_to_targets(net, targets, ramp=1.0):
    """Magnitude-prune each weight layer toward its density target.

    ``ramp`` in (0,1] interpolates the kept density between 1.0 and the
    final target.  New masks are intersected with existing ones, so masks
    are monotone non-increasing within a phase.
    """
    for i, p in net.weight_params():
        target = targets.get(i, 1.0)
        density = 1.0 - (1.0 - target) * ramp
        if density >= 1.0:
            continue
        w = p.value if p.mask is None else p.value * p.mask
        thr = threshold_for_target_density(w, density)
        new_mask = prune_weights_by_magnitude(w, thr)
        if p.mask is not None:
            new_mask = new_mask * p.mask
        p.set_mask(new_mask)


def _snapshot(net):
    return [(p.value.copy(), None if p.mask is None else p.mask.copy())
            for p in net.params()]


def _restore(net, snap):
    for p, (value, mask) in zip(net.params(), snap):
        p.value = value.copy()
        p.mask = None if mask is None else mask.copy()
        p.grad = np.zeros_like(p.value)


def joint_finetune(net, mask_cfg, cfg, train_split, val_split):
    """Warm-up with joint regularization, then prune-and-finetune.

    Warm-up keeps the original optimizer at ``lr * lr_scale`` with the l1
    term and dynamic masks active.  The pruning phase switches to Adadelta,
    ramps the per-layer weight densities to their targets and re-prunes
    once per epoch; weight masks only ever shrink.  On divergence the last
    good state is restored.  Returns the history; the network ends at the
    best validation accuracy seen after the ramp completed.
    """
    targets = cfg.weight_target_density or {}
    net.set_mask_cfg(mask_cfg)
    if cfg.base_dropout is not None:
        reconcile_dropout(net, mask_cfg, cfg.base_dropout)
    rng = np.random.default_rng(cfg.seed + 1)
    history = []
    alpha = cfg.l1_strength

    def record(phase, epoch, losses):
        acc, stats = evaluate(net, val_split, mode="jp" if mask_cfg.per_layer_rate else "wp_only")
        history.append({
            "phase": phase, "epoch": epoch,
            "loss": losses[0], "ce": losses[1], "l1": losses[2],
            "val_acc": acc,
            "weight_density": net.weight_density(),
            "act_percent": stats.activation_percent,
        })
        return acc

    best = (None, -1.0)
    try:
        if cfg.warmup_epochs:
            opt = _make_opt(cfg, net.params(), cfg.lr * cfg.lr_scale)
            for epoch in range(cfg.warmup_epochs):
                losses = run_epoch(net, opt, train_split, cfg, rng, alpha=alpha)
                record("warmup", epoch, losses)
        opt = make_optimizer("adadelta", net.params(), lr=cfg.adadelta_lr,
                             rho=cfg.rho, eps=cfg.eps)
        for epoch in range(cfg.finetune_epochs):
            ramp = min(1.0, (epoch + 1) / max(1, cfg.prune_ramp_epochs))
            prune_to_targets(net, targets, ramp)
            losses = run_epoch(net, opt, train_split, cfg, rng, alpha=alpha)
            acc = record("finetune", epoch, losses)
            if ramp >= 1.0 and acc > best[1]:
                best = (_snapshot(net), acc)
    except DivergenceError as e:
        log.warning("finetuning diverged (%s); restoring last good state", e)
        history.append({"phase": "aborted", "epoch": -1, "loss": float("nan"),
                        "ce": float("nan"), "l1": float("nan"), "val_acc": float("nan"),
                        "weight_density": net.weight_density(), "act_percent": float("nan")})
    if best[0] is not None:
        _restore(net, best[0])
    return history


def weight_prune_only(net, cfg, train_split, val_split):
    """WP baseline: same schedule with no activation masks."""
    return joint_finetune(net, WinnerRateConfig(), cfg, train_split, val_split)


HISTORY_HEADER = ["phase", "epoch", "loss", "ce", "l1", "val_acc",
                  "weight_density", "act_percent"]


def history_rows(history):
    rows = []
    for row in history:
        rows.append([row.get(k, "") for k in HISTORY_HEADER])
    return HISTORY_HEADER, rows
