"""Command-line surface tying the pipeline together.

Every subcommand reads the experiment config, writes its CSV/checkpoint
artifacts into the config's output directory and prints a one-line
summary.  Exit status 0 on success, 1 with a diagnostic on failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import checkpoint as ckpt_io
from . import metrics, pipeline
from .config import load_experiment
from .errors import JointPruneError
from .sparsity import WinnerRateConfig


def _out(exp, name):
    os.makedirs(exp.out_dir, exist_ok=True)
    return os.path.join(exp.out_dir, name)


def _load_net(exp, path):
    ckpt = ckpt_io.load_checkpoint(path)
    return ckpt_io.network_from_checkpoint(ckpt)


def cmd_train_dense(exp, args):
    net = exp.preset.build(seed=exp.train_cfg.seed)
    train, val, test = exp.load_data()
    history = pipeline.train_dense(net, exp.train_cfg, train, val)
    acc = pipeline.accuracy(net, test)
    path = _out(exp, "dense.ckpt")
    ckpt_io.save_checkpoint(
        ckpt_io.checkpoint_from_network(net, meta={"seed": exp.train_cfg.seed,
                                                   "epochs": exp.train_cfg.baseline_epochs}),
        path,
    )
    metrics.emit_report(pipeline.history_rows(history), _out(exp, "dense_history.csv"))
    print(f"train-dense: model={exp.preset.name} test_acc={acc:.4f} checkpoint={path}")
    return 0


def cmd_sweep_sensitivity(exp, args):
    net = _load_net(exp, args.checkpoint or _out(exp, "dense.ckpt"))
    _, val, _ = exp.load_data()
    curve = pipeline.sensitivity_sweep(net, val, exp.rate_grid, exp.preset.mask_layers)
    rows = [
        [layer, f"{rate:.4f}", f"{drop:.6f}"]
        for layer, pts in sorted(curve.points.items())
        for rate, drop in pts
    ]
    path = _out(exp, "sensitivity.csv")
    metrics.emit_report((["layer_index", "winner_rate", "accuracy_drop"], rows), path)
    chosen = pipeline.choose_winner_rates(curve, exp.tolerable_drop, exp.mask_cfg)
    print(f"sweep-sensitivity: baseline={curve.baseline_accuracy:.4f} "
          f"rows={len(rows)} chosen_rates={chosen.per_layer_rate} out={path}")
    return 0


def cmd_prune(exp, args):
    net = _load_net(exp, args.checkpoint or _out(exp, "dense.ckpt"))
    train, val, test = exp.load_data()
    history = pipeline.joint_finetune(net, exp.mask_cfg, exp.train_cfg, train, val)
    acc, stats = pipeline.evaluate(net, test, mode="jp")
    path = _out(exp, "jp.ckpt")
    ckpt_io.save_checkpoint(
        ckpt_io.checkpoint_from_network(net, exp.mask_cfg,
                                        meta={"seed": exp.train_cfg.seed}),
        path,
    )
    metrics.emit_report(pipeline.history_rows(history), _out(exp, "prune_history.csv"))
    print(f"prune: test_acc={acc:.4f} weight_density={net.weight_density():.4f} "
          f"acti_percent={stats.activation_percent:.2f} checkpoint={path}")
    return 0


def cmd_eval(exp, args):
    net = _load_net(exp, args.checkpoint or _out(exp, "jp.ckpt"))
    mode = {"dense": "dense", "wp": "wp_only", "jp": "jp"}[args.mode]
    if mode == "jp" and net.mask_cfg is None:
        net.set_mask_cfg(exp.mask_cfg)
    _, _, test = exp.load_data()
    stat_layers = exp.preset.mask_layers
    acc, stats = pipeline.evaluate(net, test, mode=mode, stat_layers=stat_layers)
    metrics.emit_report(stats, _out(exp, f"sparsity_{args.mode}.csv"))
    print(f"eval: mode={args.mode} test_acc={acc:.4f} "
          f"acti_percent={stats.activation_percent:.2f}")
    return 0


def cmd_report_macs(exp, args):
    net = _load_net(exp, args.checkpoint or _out(exp, "jp.ckpt"))
    if net.mask_cfg is None and args.masked:
        net.set_mask_cfg(exp.mask_cfg)
    _, _, test = exp.load_data()
    batch = test.images[: args.batch]
    report = metrics.count_effective_macs(net, batch)
    path = _out(exp, "macs.csv")
    metrics.emit_report(report, path)
    print(f"report-macs: mac_percent={report.mac_percent:.2f} "
          f"weight_density={report.weight_density:.4f} out={path}")
    return 0


def cmd_bench_fc(exp, args):
    record = metrics.bench_condensed_fc(args.n_in, args.n_out, args.rate,
                                        trials=args.trials, seed=exp.train_cfg.seed)
    path = _out(exp, "bench_fc.csv")
    metrics.emit_report(record, path)
    flag = " (unstable)" if record.unstable else ""
    print(f"bench-fc: {args.n_in}x{args.n_out} rate={args.rate} "
          f"speedup={record.speedup:.2f}x{flag} out={path}")
    return 0


def cmd_predict_threshold_study(exp, args):
    net = _load_net(exp, args.checkpoint or _out(exp, "jp.ckpt"))
    if net.mask_cfg is None:
        net.set_mask_cfg(exp.mask_cfg)
    _, _, test = exp.load_data()
    exact_cfg = net.mask_cfg
    acc_exact, _ = pipeline.evaluate(net, test, mode="jp")
    rows = []
    for eps in args.eps_grid:
        net.set_mask_cfg(WinnerRateConfig(
            per_layer_rate=dict(exact_cfg.per_layer_rate),
            downsample_rate=eps,
            selection_mode="predicted_threshold",
            offset_seed=exact_cfg.offset_seed,
        ))
        acc, _ = pipeline.evaluate(net, test, mode="jp")
        rows.append([f"{eps:.4f}", f"{acc:.6f}", f"{acc_exact - acc:.6f}"])
    net.set_mask_cfg(exact_cfg)
    path = _out(exp, "threshold_prediction.csv")
    metrics.emit_report((["downsample_rate", "accuracy", "drop_vs_exact"], rows), path)
    print(f"predict-threshold-study: exact_acc={acc_exact:.4f} points={len(rows)} out={path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="jointprune",
                                     description="joint weight/activation pruning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **extra):
        p = sub.add_parser(name)
        p.add_argument("config", help="experiment config YAML")
        p.set_defaults(fn=fn)
        return p

    add("train-dense", cmd_train_dense)
    p = add("sweep-sensitivity", cmd_sweep_sensitivity)
    p.add_argument("--checkpoint")
    p = add("prune", cmd_prune)
    p.add_argument("--checkpoint")
    p = add("eval", cmd_eval)
    p.add_argument("--checkpoint")
    p.add_argument("--mode", choices=["dense", "wp", "jp"], default="jp")
    p = add("report-macs", cmd_report_macs)
    p.add_argument("--checkpoint")
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--masked", action="store_true",
                   help="attach the config's winner rates if the checkpoint has none")
    p = add("bench-fc", cmd_bench_fc)
    p.add_argument("--n-in", type=int, default=4096)
    p.add_argument("--n-out", type=int, default=4096)
    p.add_argument("--rate", type=float, default=0.10)
    p.add_argument("--trials", type=int, default=100)
    p = add("predict-threshold-study", cmd_predict_threshold_study)
    p.add_argument("--checkpoint")
    p.add_argument("--eps-grid", type=float, nargs="+",
                   default=[1.0, 0.5, 0.2, 0.1, 0.05])
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        exp = load_experiment(args.config)
        return args.fn(exp, args)
    except JointPruneError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
