"""Effective-MAC accounting, sparsity stats, CSV reports and the fc
condensation benchmark.

A MAC is counted as effective iff its input activation is nonzero AND its
weight survives pruning.  Pooling windows, bias adds and mask-selection
comparisons are not MACs and are excluded.  Dense counts use batch size 1.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, JointPruneError
from .layers import _im2col
from .sparsity import select_winners_exact

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None


def weight_layer_names(net):
    """Stable display names for fc/conv layers: conv1, conv2, ..., fc1, ..."""
    names = {}
    counts = {"fc": 0, "conv2d": 0}
    for i, layer in enumerate(net.layers):
        if layer.kind in counts:
            counts[layer.kind] += 1
            prefix = "fc" if layer.kind == "fc" else "conv"
            names[i] = f"{prefix}{counts[layer.kind]}"
    return names


def dense_macs_for_layer(net, index):
    layer = net.layers[index]
    out_shape = net.layer_shapes[index]
    if layer.kind == "fc":
        g = layer.spec.geometry
        return g["n_in"] * g["n_out"]
    if layer.kind == "conv2d":
        g = layer.spec.geometry
        _, oh, ow = out_shape
        return oh * ow * g["kernel"] * g["kernel"] * g["in_ch"] * g["out_ch"]
    raise ConfigError(f"layer {index} ({layer.kind}) has no MACs")


def count_dense_macs(net):
    """Per-layer dense MAC counts at batch size 1, keyed by layer index."""
    return {i: dense_macs_for_layer(net, i) for i in weight_layer_names(net)}


@dataclass
class MacLayerRow:
    name: str
    dense_macs: int
    effective_macs: float
    acti_density_in: float
    weight_density: float

    @property
    def mac_percent(self):
        return 100.0 * self.effective_macs / self.dense_macs


@dataclass
class MacReport:
    rows: list = field(default_factory=list)

    @property
    def total_dense(self):
        return sum(r.dense_macs for r in self.rows)

    @property
    def total_effective(self):
        return sum(r.effective_macs for r in self.rows)

    @property
    def mac_percent(self):
        return 100.0 * self.total_effective / self.total_dense

    @property
    def weight_density(self):
        kept = sum(r.weight_density * r.dense_macs for r in self.rows)
        return kept / self.total_dense


def _effective_macs_fc(x, wmask):
    # pairs (nonzero input i) x (unpruned weight (i, o)), summed over the batch
    nz = (x != 0).astype(np.float64)
    return float((nz @ wmask.sum(axis=1).astype(np.float64)).sum())


def _effective_macs_conv(x, layer, wmask):
    g = layer.spec.geometry
    k, s, p = g["kernel"], g["stride"], g["pad"]
    _, oh, ow = layer.out_shape(x.shape[1:])
    ind = (x != 0).astype(np.float32)
    if p:
        ind = np.pad(ind, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = _im2col(ind, k, k, s, oh, ow).reshape(x.shape[0], -1, oh * ow)
    per_elem = wmask.reshape(g["out_ch"], -1).sum(axis=0).astype(np.float32)
    return float(np.einsum("e,bep->", per_elem, cols))


def count_effective_macs(net, batch):
    """Measure effective MACs on a sample batch with the net's masks active.

    Runs an eval-mode forward (dynamic winner masks applied when the net
    carries a mask config), then counts nonzero-input x unpruned-weight
    pairs per fc/conv layer, averaged over the batch.
    """
    batch = np.asarray(batch, dtype=net.dtype)
    result = net.forward(batch, mode="eval")
    names = weight_layer_names(net)
    report = MacReport()
    b = batch.shape[0]
    for i, name in names.items():
        layer = net.layers[i]
        inp = batch if i == 0 else result.post_mask[i - 1]
        w = layer.params[0]
        wmask = w.mask if w.mask is not None else np.ones_like(w.value)
        if layer.kind == "fc":
            eff = _effective_macs_fc(inp, wmask) / b
        else:
            eff = _effective_macs_conv(inp, layer, wmask) / b
        report.rows.append(
            MacLayerRow(
                name=name,
                dense_macs=dense_macs_for_layer(net, i),
                effective_macs=eff,
                acti_density_in=float((inp != 0).mean()),
                weight_density=w.density(),
            )
        )
    return report


@dataclass
class SparsityStats:
    """Measured nonzero-activation fractions of the masked-layer outputs
    plus the network output, weighted by activation count."""

    per_layer: list = field(default_factory=list)  # (layer_index, size, nonzero_frac)

    @property
    def activation_percent(self):
        total = sum(size for _, size, _ in self.per_layer)
        nnz = sum(size * frac for _, size, frac in self.per_layer)
        return 100.0 * nnz / total


# -- fc condensation benchmark ---------------------------------------------


@dataclass
class SpeedupRecord:
    n_in: int
    n_out: int
    winner_rate: float
    time_original: float  # seconds, median
    time_select: float
    time_condensed_mac: float
    trials: int
    unstable: bool

    @property
    def time_prune_plus_mac(self):
        return self.time_select + self.time_condensed_mac

    @property
    def speedup(self):
        return self.time_original / self.time_prune_plus_mac


def _median_times(fn, trials, warmup):
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(trials):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    med = statistics.median(samples)
    mean = statistics.fmean(samples)
    spread = statistics.pstdev(samples)
    return med, spread > 0.2 * mean


def bench_condensed_fc(n_in, n_out, rate, trials=100, warmup=10, seed=0):
    """Dense matvec vs winner selection + gathered-row condensed matvec.

    Batch size 1, single thread, median of ``trials`` runs after warm-up.
    Functional equivalence of the two paths is asserted before timing.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n_in, n_out)).astype(np.float32)
    a = rng.standard_normal(n_in).astype(np.float32)
    k = select_winners_exact(a, rate).winner_count
    idx = np.argpartition(np.abs(a), n_in - k)[n_in - k :]

    masked = np.zeros_like(a)
    masked[idx] = a[idx]
    dense_on_winners = masked @ w
    condensed = a[idx] @ w[idx]
    scale = max(float(np.abs(dense_on_winners).max()), 1e-6)
    err = float(np.abs(condensed - dense_on_winners).max()) / scale
    if err > 1e-5:
        raise JointPruneError(f"condensed fc output mismatch, rel err {err:.2e}")

    def run_dense():
        a @ w

    def run_select():
        kk = n_in - k
        np.argpartition(np.abs(a), kk)[kk:]

    def run_condensed():
        a[idx] @ w[idx]

    def timed():
        t_orig, u1 = _median_times(run_dense, trials, warmup)
        t_sel, u2 = _median_times(run_select, trials, warmup)
        t_mac, u3 = _median_times(run_condensed, trials, warmup)
        return t_orig, t_sel, t_mac, u1 or u2 or u3

    if threadpool_limits is not None:
        with threadpool_limits(limits=1):
            t_orig, t_sel, t_mac, unstable = timed()
    else:
        t_orig, t_sel, t_mac, unstable = timed()
    return SpeedupRecord(
        n_in=n_in,
        n_out=n_out,
        winner_rate=rate,
        time_original=t_orig,
        time_select=t_sel,
        time_condensed_mac=t_mac,
        trials=trials,
        unstable=unstable,
    )


# -- CSV emission -----------------------------------------------------------

MAC_HEADER = ["layer", "dense_macs", "effective_macs", "acti_density_in",
              "weight_density", "mac_percent"]
SPARSITY_HEADER = ["layer_index", "size", "nonzero_frac"]
SPEEDUP_HEADER = ["n_in", "n_out", "winner_rate", "time_original_s",
                  "time_select_s", "time_condensed_mac_s", "trials", "unstable", "speedup"]


def _rows_for(report):
    if isinstance(report, MacReport):
        rows = [
            [r.name, r.dense_macs, f"{r.effective_macs:.6f}", f"{r.acti_density_in:.8f}",
             f"{r.weight_density:.8f}", f"{r.mac_percent:.6f}"]
            for r in report.rows
        ]
        if report.rows:
            rows.append(
                ["Total", report.total_dense, f"{report.total_effective:.6f}", "",
                 f"{report.weight_density:.8f}", f"{report.mac_percent:.6f}"]
            )
        return MAC_HEADER, rows
    if isinstance(report, SparsityStats):
        return SPARSITY_HEADER, [
            [i, size, f"{frac:.8f}"] for i, size, frac in report.per_layer
        ]
    if isinstance(report, SpeedupRecord):
        r = report
        return SPEEDUP_HEADER, [
            [r.n_in, r.n_out, r.winner_rate, f"{r.time_original:.9f}", f"{r.time_select:.9f}",
             f"{r.time_condensed_mac:.9f}", r.trials, int(r.unstable), f"{r.speedup:.4f}"]
        ]
    raise ConfigError(f"cannot emit a report of type {type(report).__name__}")


def emit_report(report, path):
    """Write a report as CSV with a stable column order."""
    if isinstance(report, tuple):  # already-parsed (header, rows)
        header, rows = report
    else:
        header, rows = _rows_for(report)
    try:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([str(c) for c in row])
    except OSError as e:
        raise JointPruneError(f"cannot write report to {path}: {e}") from None


def read_report(path):
    """Parse an emitted CSV back into (header, rows-of-strings)."""
    try:
        with open(path, newline="") as f:
            reader = csv.reader(f)
            rows = list(reader)
    except OSError as e:
        raise JointPruneError(f"cannot read report from {path}: {e}") from None
    if not rows:
        raise JointPruneError(f"{path}: empty report file")
    return rows[0], rows[1:]
