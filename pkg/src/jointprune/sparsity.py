"""Dynamic activation winner selection and static magnitude weight masking.

Winner selection keeps, per sample, the k activations of largest absolute
value where k = ceil(rate * N).  Magnitude (not signed value) is the
criterion so that large negative leaky-ReLU responses survive.  Ties at the
cut magnitude are broken in favour of the lowest flat index, which makes
reruns deterministic.

The predicted-threshold variant estimates the k-th magnitude from a strided
subsample instead of partitioning the full tensor; the realized winner
count is then approximate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError

EXACT_TOPK = "exact_topk"
PREDICTED_THRESHOLD = "predicted_threshold"


@dataclass
class WinnerRateConfig:
    """Per-layer winner rates plus the down-sampling setup for prediction.

    ``per_layer_rate`` maps a network layer index to the kept fraction of
    that layer's output activations.  The final (output) layer must never
    appear here.  ``downsample_rate`` is only consulted in
    ``predicted_threshold`` mode.
    """

    per_layer_rate: dict = field(default_factory=dict)
    downsample_rate: float = 1.0
    selection_mode: str = EXACT_TOPK
    offset_seed: int = 0

    def __post_init__(self):
        for idx, rate in self.per_layer_rate.items():
            if not 0.0 < rate <= 1.0:
                raise ConfigError(f"winner rate for layer {idx} must be in (0,1], got {rate}")
        if not 0.0 < self.downsample_rate <= 1.0:
            raise ConfigError(f"downsample rate must be in (0,1], got {self.downsample_rate}")
        if self.selection_mode not in (EXACT_TOPK, PREDICTED_THRESHOLD):
            raise ConfigError(f"unknown selection mode {self.selection_mode!r}")

    def rate_for(self, layer_index):
        return self.per_layer_rate.get(layer_index)

    def with_rates(self, per_layer_rate):
        return WinnerRateConfig(
            per_layer_rate=dict(per_layer_rate),
            downsample_rate=self.downsample_rate,
            selection_mode=self.selection_mode,
            offset_seed=self.offset_seed,
        )


@dataclass
class ActivationMask:
    """Binary mask for one sample's activation tensor plus its winner count."""

    mask: np.ndarray
    winner_count: int


def winner_count(rate, n):
    """k = ceil(rate * N), clipped into [1, N]."""
    return min(n, max(1, math.ceil(rate * n)))


def _topk_mask_rows(mag, k):
    """Top-k mask per row of a (B, N) magnitude array, lowest-index tie rule."""
    b, n = mag.shape
    if k >= n:
        return np.ones_like(mag, dtype=bool)
    # np.partition is introselect: expected linear time, no full sort.
    kth = np.partition(mag, n - k, axis=1)[:, n - k]
    gt = mag > kth[:, None]
    need = k - gt.sum(axis=1)
    eq = mag == kth[:, None]
    take = eq & (np.cumsum(eq, axis=1) <= need[:, None])
    return gt | take


def select_winners_exact(acts, rate):
    """Exact top-k winner mask for a single activation tensor.

    Returns an :class:`ActivationMask` congruent to ``acts`` keeping the
    k = ceil(rate * N) entries of largest magnitude.
    """
    acts = np.asarray(acts)
    if acts.size == 0:
        raise ShapeError("cannot select winners from an empty activation tensor")
    if not 0.0 < rate <= 1.0:
        raise ConfigError(f"winner rate must be in (0,1], got {rate}")
    k = winner_count(rate, acts.size)
    flat = np.abs(acts).reshape(1, -1)
    mask = _topk_mask_rows(flat, k).reshape(acts.shape)
    return ActivationMask(mask=mask.astype(acts.dtype), winner_count=k)


def select_winners_batch(acts, rate):
    """Exact per-sample winner masks for a batch; axis 0 is the sample axis."""
    acts = np.asarray(acts)
    if acts.size == 0:
        raise ShapeError("cannot select winners from an empty activation tensor")
    b = acts.shape[0]
    n = acts[0].size
    k = winner_count(rate, n)
    mag = np.abs(acts).reshape(b, n)
    return _topk_mask_rows(mag, k).reshape(acts.shape).astype(acts.dtype)


def _subsample_indices(n, eps, offset):
    m = max(1, round(eps * n))
    stride = max(1, int(1.0 / eps))
    return (offset + np.arange(m) * stride) % n


def predict_threshold(acts, rate, eps, offset=0):
    """Estimate the top-k magnitude cut from a strided subsample.

    The subsample has round(eps * N) elements taken every floor(1/eps)
    positions starting at ``offset``; theta is the ceil(eps * k)-th largest
    magnitude within it.  The caller masks by ``|a| > theta`` (strict), so
    an all-equal tensor masks to empty.
    """
    acts = np.asarray(acts)
    n = acts.size
    if n == 0:
        raise ShapeError("cannot predict a threshold for an empty activation tensor")
    if eps * n < 1.0:
        raise ConfigError(f"downsample rate {eps} yields an empty subsample for N={n}")
    k = winner_count(rate, n)
    idx = _subsample_indices(n, eps, offset)
    sub = np.abs(acts.reshape(-1))[idx]
    r = min(len(sub), max(1, math.ceil(eps * k)))
    return float(np.partition(sub, len(sub) - r)[len(sub) - r])


def predicted_mask_batch(acts, rate, eps, offset=0):
    """Per-sample ``|a| > theta`` masks using the subsampled threshold."""
    acts = np.asarray(acts)
    b = acts.shape[0]
    n = acts[0].size
    if eps * n < 1.0:
        raise ConfigError(f"downsample rate {eps} yields an empty subsample for N={n}")
    k = winner_count(rate, n)
    idx = _subsample_indices(n, eps, offset)
    mag = np.abs(acts).reshape(b, n)
    sub = mag[:, idx]
    r = min(len(idx), max(1, math.ceil(eps * k)))
    theta = np.partition(sub, sub.shape[1] - r, axis=1)[:, sub.shape[1] - r]
    return (mag > theta[:, None]).reshape(acts.shape).astype(acts.dtype)


def apply_activation_mask(acts, mask):
    """Element-wise product; winners pass through, the rest become exact zeros."""
    acts = np.asarray(acts)
    m = mask.mask if isinstance(mask, ActivationMask) else np.asarray(mask)
    if m.shape != acts.shape:
        raise ShapeError(f"activation mask shape {m.shape} != activations {acts.shape}")
    return acts * m


def prune_weights_by_magnitude(weights, threshold):
    """Binary keep-mask: 1 iff |w| > threshold.

    Monotone in the threshold; composing with an existing mask keeps the
    static-mask guarantee that pruned weights never come back.
    """
    if threshold < 0:
        raise ConfigError(f"prune threshold must be >= 0, got {threshold}")
    weights = np.asarray(weights)
    return (np.abs(weights) > threshold).astype(weights.dtype)


def threshold_for_target_density(weights, target_density):
    """Magnitude cut such that |w| > cut leaves ~target_density of weights.

    Uses the (1 - d) quantile of |w|; the achieved density is within one
    weight of the target up to ties.
    """
    if not 0.0 < target_density <= 1.0:
        raise ConfigError(f"target density must be in (0,1], got {target_density}")
    weights = np.asarray(weights)
    if target_density == 1.0:
        return 0.0
    mag = np.abs(weights).reshape(-1)
    n = mag.size
    keep = winner_count(target_density, n)
    # cut just below the keep-th largest magnitude
    kth = np.partition(mag, n - keep)[n - keep]
    return float(np.nextafter(kth, 0.0))
