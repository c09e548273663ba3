"""Experiment configuration: JSON file plus ``--set key=value`` overrides.

Every key is known up front; typos are rejected with the offending dotted
path. The resolved config is plain JSON-compatible data.
"""

from __future__ import annotations

import copy
import json
from dataclasses import replace
from pathlib import Path

from .experiment import DESK_ARCH
from .nnet import TrainSpec
from .pipeline import METHODS
from .regularize import RegCoefficients


class ConfigError(ValueError):
    """Malformed or unknown configuration (a usage error)."""


DEFAULTS = {
    "data": {
        "source": "synthetic",  # synthetic | idx
        "classes": 10,
        "dims": [2, 12, 12],
        "count": 3000,
        "seed": 0,
        "separation": 0.3,
        "noise": 1.0,
        "smooth": 2,
        "test_fraction": 1 / 3,
        "train_images": None,
        "train_labels": None,
        "test_images": None,
        "test_labels": None,
        "limit": None,
    },
    "arch": copy.deepcopy(DESK_ARCH),
    "train": {
        "lr": 0.02,
        "momentum": 0.9,
        "batch_size": 64,
        "epochs": 10,
        "lr_step": 7,
        "lr_decay": 0.1,
        "lambda_mean": 1e-4,
        "lambda_var": 3e-3,
        "lambda_group": 1e-3,
        "seed": 0,
        "finetune_epochs": 4,
        "finetune_lr": 0.005,
    },
    "tile_size": 32,
    "tile_scope": "auto",
    "method": "dub",
    "ratio": 0.8,
    "tile_ratio": 0.4,
    "full_bits": None,
    "out": "out",
}

# keys holding free-form values (not descended into during validation)
OPAQUE = {"arch", "data.dims"}


def _check(cfg, ref, prefix=""):
    if not isinstance(cfg, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object, got {type(cfg).__name__}")
    for key, val in cfg.items():
        path = f"{prefix}{key}"
        if key not in ref:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(ref[key], dict) and path not in OPAQUE:
            _check(val, ref[key], path + ".")


def merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in OPAQUE:
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(item: str) -> tuple[list[str], object]:
    """``a.b=1.5`` -> (["a", "b"], 1.5). Values parse as JSON, else stay strings."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    if not key:
        raise ConfigError(f"override {item!r} has an empty key")
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    return key.split("."), val


def apply_override(cfg: dict, path: list[str], value):
    ref, node = DEFAULTS, cfg
    for i, key in enumerate(path):
        dotted = ".".join(path[: i + 1])
        if not isinstance(ref, dict) or key not in ref:
            raise ConfigError(f"unknown config key {dotted!r}")
        if i == len(path) - 1:
            node[key] = value
        else:
            if dotted in OPAQUE:
                raise ConfigError(f"{dotted!r} can only be set as a whole")
            ref, node = ref[key], node.setdefault(key, {})


def load_config(path=None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as e:
            raise FileNotFoundError(f"cannot read config {p}: {e.strerror}") from e
        try:
            user = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
        _check(user, DEFAULTS)
        cfg = merge(cfg, user)
    for item in overrides:
        apply_override(cfg, *parse_override(item))
    validate(cfg)
    return cfg


def validate(cfg: dict):
    if cfg["method"] not in METHODS:
        raise ConfigError(f"method: {cfg['method']!r} is not one of {', '.join(METHODS)}")
    if cfg["data"]["source"] not in ("synthetic", "idx"):
        raise ConfigError(f"data.source: {cfg['data']['source']!r} must be 'synthetic' or 'idx'")
    for key in ("ratio", "tile_ratio"):
        r = cfg[key]
        if not isinstance(r, (int, float)) or not 0 <= r < 1:
            raise ConfigError(f"{key}: must be a number in [0, 1), got {r!r}")
    if not isinstance(cfg["arch"], list) or not cfg["arch"]:
        raise ConfigError("arch: must be a non-empty list of layers")
    try:
        train_spec(cfg)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"train: {e}") from e


def coefficients(cfg: dict, method: str | None = None) -> RegCoefficients:
    """Regularizer coefficients the given method trains with."""
    t = cfg["train"]
    method = method or cfg["method"]
    if method in ("dub", "sdub"):
        return RegCoefficients(t["lambda_mean"], lambda_var=t["lambda_var"])
    if method.startswith("structured"):
        return RegCoefficients(t["lambda_mean"], lambda_group=t["lambda_group"])
    return RegCoefficients(t["lambda_mean"])


def grouping(method: str) -> str:
    if method.startswith("structured-"):
        return method.split("-", 1)[1]
    return "tile"


def train_spec(cfg: dict, method: str | None = None) -> TrainSpec:
    t = cfg["train"]
    method = method or cfg["method"]
    spec = TrainSpec(
        lr=t["lr"], momentum=t["momentum"], batch_size=int(t["batch_size"]), epochs=int(t["epochs"]),
        lr_step=int(t["lr_step"]), lr_decay=t["lr_decay"], tile_size=int(cfg["tile_size"]),
        seed=int(t["seed"]), finetune_epochs=int(t["finetune_epochs"]), finetune_lr=t["finetune_lr"],
        grouping=grouping(method), tile_scope=cfg["tile_scope"],
    )
    return replace(spec, coeffs=coefficients(cfg, method))


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)
