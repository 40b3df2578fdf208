"""Experiment configuration: a YAML file tying together model, data,
training hyperparameters and sparsity settings.

Unknown models, malformed values and missing required keys raise
:class:`ConfigError` naming the offending key path.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import yaml

from . import datasets
from .errors import ConfigError
from .models import get_preset
from .pipeline import TrainConfig
from .sparsity import WinnerRateConfig


@dataclass
class Experiment:
    preset: object
    train_cfg: TrainConfig
    mask_cfg: WinnerRateConfig
    data_dir: str
    val_size: int
    train_subset: int | None
    rate_grid: list
    tolerable_drop: float
    out_dir: str
    raw: dict

    def load_data(self):
        """Returns (train, val, test) splits prepared for the model."""
        preset = self.preset
        if preset.dataset == "mnist":
            paths = datasets.mnist_paths(self.data_dir)
            full = datasets.load_mnist(*paths["train"], role="train")
            test = datasets.load_mnist(*paths["test"], role="test")
        else:
            paths = datasets.cifar10_paths(self.data_dir)
            full = datasets.load_cifar10(paths["train"], role="train")
            test = datasets.load_cifar10(paths["test"], role="test")
        train, val = datasets.train_val_split(full, self.val_size, self.train_cfg.seed)
        if self.train_subset:
            train = train.subset(np.arange(min(self.train_subset, len(train))))
        if preset.crop:
            train = datasets.center_crop(train, preset.crop)
            val = datasets.center_crop(val, preset.crop)
            test = datasets.center_crop(test, preset.crop)
        return train, val, test


def _get(doc, path, default=None, required=False):
    cur = doc
    for part in path.split("."):
        if not isinstance(cur, dict) or part not in cur:
            if required:
                raise ConfigError(f"missing config key: {path}")
            return default
        cur = cur[part]
    return cur


def _resolve_rates(value, preset):
    if value in (None, "reference"):
        return dict(preset.reference_rates)
    if isinstance(value, dict):
        return {int(k): float(v) for k, v in value.items()}
    raise ConfigError("prune.winner_rates must be 'reference' or a {layer: rate} map")


def _resolve_targets(value, preset):
    if value in (None, "reference"):
        return dict(preset.weight_targets)
    if isinstance(value, dict):
        return {int(k): float(v) for k, v in value.items()}
    raise ConfigError("prune.weight_targets must be 'reference' or a {layer: density} map")


def load_experiment(path):
    try:
        with open(path) as f:
            doc = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"config {path} is not valid YAML: {e}") from None

    model = _get(doc, "model", required=True)
    base_dropout = _get(doc, "train.base_dropout")
    if base_dropout is None:
        preset = get_preset(model)
    else:
        preset = get_preset(model, base_dropout=float(base_dropout))
    seed = int(_get(doc, "seed", 0))

    train_cfg = TrainConfig(
        optimizer=_get(doc, "train.optimizer", "adadelta"),
        lr=float(_get(doc, "train.lr", 1.0)),
        momentum=float(_get(doc, "train.momentum", 0.9)),
        rho=float(_get(doc, "train.rho", 0.95)),
        eps=float(_get(doc, "train.eps", 1e-6)),
        baseline_epochs=int(_get(doc, "train.baseline_epochs", 20)),
        batch_size=int(_get(doc, "train.batch_size", 100)),
        l1_strength=float(_get(doc, "prune.l1_strength", 1e-5)),
        lr_scale=float(_get(doc, "prune.lr_scale", 0.1)),
        adadelta_lr=float(_get(doc, "prune.adadelta_lr", 0.1)),
        warmup_epochs=int(_get(doc, "prune.warmup_epochs", 1)),
        finetune_epochs=int(_get(doc, "prune.finetune_epochs", 10)),
        prune_ramp_epochs=int(_get(doc, "prune.prune_ramp_epochs", 4)),
        base_dropout=_get(doc, "train.base_dropout", preset.base_dropout),
        weight_target_density=_resolve_targets(_get(doc, "prune.weight_targets"), preset),
        seed=seed,
    )
    mask_cfg = WinnerRateConfig(
        per_layer_rate=_resolve_rates(_get(doc, "prune.winner_rates"), preset),
        downsample_rate=float(_get(doc, "sparsity.downsample_rate", 1.0)),
        selection_mode=_get(doc, "sparsity.selection_mode", "exact_topk"),
        offset_seed=seed,
    )
    return Experiment(
        preset=preset,
        train_cfg=train_cfg,
        mask_cfg=mask_cfg,
        data_dir=_get(doc, "data.dir", required=True),
        val_size=int(_get(doc, "data.val_size", 10000)),
        train_subset=_get(doc, "data.train_subset"),
        rate_grid=[float(r) for r in _get(doc, "prune.rate_grid",
                                          [0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0])],
        tolerable_drop=float(_get(doc, "prune.tolerable_drop", 0.01)),
        out_dir=_get(doc, "outputs", os.path.join("runs", model)),
        raw=doc,
    )
