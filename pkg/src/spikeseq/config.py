"""TOML run configuration flattened to dotted keys.

Both ``[model]`` tables and top-level dotted keys (``model.variant = "lif"``)
are accepted. Unknown keys are rejected so typos surface as errors.
"""

from __future__ import annotations

import os
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from spikeseq.network import VARIANTS, ModelSpec
from spikeseq.trainer import TrainConfig


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


DEFAULTS: dict = {
    "seed": 0,
    "model.variant": "gated_v2",
    "model.layers": 2,
    "model.units": 64,
    "model.alpha": 0.95,
    "model.beta": 0.9,
    "model.norm": True,
    "model.smooth": False,
    "model.ema_momentum": 0.99,
    "quant.n_bits": 6,
    "quant.k_threshold": 4,
    "quant.reset_mode": "dequantized",
    "train.lr0": 1e-3,
    "train.batch": 64,
    "train.epochs": 24,
    "train.dropout": 0.1,
    "train.halve_patience": 3,
    "train.halve_delta": 0.1,
    "train.clip": 0.0,
    "data.synthetic": "adding",
    "data.path": "",
    "data.dev_path": "",
    "data.test_path": "",
    "data.train_size": 1000,
    "data.dev_size": 200,
    "data.test_size": 200,
    "data.T": 100,
    "data.T_delay": 10,
    "data.pattern_len": 5,
    "data.classes": 10,
    "data.dim": 16,
    "data.noise": 0.1,
    "eval.checkpoint": "",
    "gradcheck.instances": 100,
    "gradcheck.fd_instances": 10,
    "gradcheck.eps": 1e-5,
    "gradcheck.oracle_tol": 1e-12,
    "gradcheck.fd_tol": 1e-4,
    "vanish.variants": ["lif", "gated_v1", "gated_v2"],
    "vanish.lags": [1, 10, 50],
    "vanish.steps": 60,
    "vanish.units": 4,
    "vanish.inputs": 3,
    "profile.archs": ["lif", "gated_v1", "gated_v2", "gru", "lstm"],
    "profile.checkpoints": [],
    "profile.normalize_to": "lstm",
    "sweep.bits": [1, 2, 3, 4, 5, 6],
    "sweep.seeds": [0],
    "sweep.smooth_baseline": True,
}


def _flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", key)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key)
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", key)
        return value
    return value


def load_config(path=None, seed: int | None = None, overrides: dict | None = None) -> dict:
    """Defaults <- file <- overrides <- SPIKESEQ_SEED <- explicit ``seed``."""
    cfg = dict(DEFAULTS)
    items = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from exc
        try:
            items = _flatten(tomllib.loads(text))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"parse error: {exc}", str(path)) from exc
    items.update(overrides or {})
    for key, value in items.items():
        if key not in DEFAULTS:
            raise ConfigError("unknown setting", key)
        cfg[key] = _coerce(key, value, DEFAULTS[key])
    env = os.environ.get("SPIKESEQ_SEED")
    if env is not None and env != "":
        try:
            cfg["seed"] = int(env)
        except ValueError as exc:
            raise ConfigError(f"expected an integer, got {env!r}", "SPIKESEQ_SEED") from exc
    if seed is not None:
        cfg["seed"] = int(seed)
    if cfg["seed"] < 0:
        raise ConfigError("must be non-negative", "seed")
    if cfg["model.variant"] not in VARIANTS:
        raise ConfigError(f"must be one of {', '.join(VARIANTS)}; got {cfg['model.variant']!r}",
                          "model.variant")
    return cfg


def model_spec(cfg: dict, input_dim: int, classes: int, label_mode: str, **over) -> ModelSpec:
    fields = dict(
        variant=cfg["model.variant"], input_dim=input_dim, classes=classes,
        layers=cfg["model.layers"], units=cfg["model.units"],
        n_bits=cfg["quant.n_bits"], k_threshold=cfg["quant.k_threshold"],
        reset_mode=cfg["quant.reset_mode"], alpha=cfg["model.alpha"], beta=cfg["model.beta"],
        ema_momentum=cfg["model.ema_momentum"], norm=cfg["model.norm"],
        smooth=cfg["model.smooth"], label_mode=label_mode)
    fields.update(over)
    try:
        return ModelSpec(**fields)
    except ValueError as exc:
        key = "quant" if "bits" in str(exc) or "k_threshold" in str(exc) else "model"
        raise ConfigError(str(exc), key) from exc


def train_config(cfg: dict, **over) -> TrainConfig:
    fields = dict(
        lr0=cfg["train.lr0"], batch=cfg["train.batch"], epochs=cfg["train.epochs"],
        dropout=cfg["train.dropout"], halve_patience=cfg["train.halve_patience"],
        halve_delta=cfg["train.halve_delta"], seed=cfg["seed"],
        clip=cfg["train.clip"] or None)
    fields.update(over)
    try:
        return TrainConfig(**fields)
    except ValueError as exc:
        raise ConfigError(str(exc), "train") from exc
