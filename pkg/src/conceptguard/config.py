"""Experiment configuration: YAML file, defaults and dotted overrides."""

from __future__ import annotations

import copy
import os
from pathlib import Path

import yaml

OUT_ENV = "CONCEPTGUARD_OUT"
DEFAULT_OUT = "runs"

DEFAULTS: dict = {
    "schema": {"K": 12, "M": 10, "k": 4, "min_distance": 4},
    "dataset": {"n_samples": 1000, "noise": 0.1, "seed": 0},
    "rules": {"path": None, "omission_rate": 0.0, "seed": 0, "dedupe": False},
    "weights": {
        "mode": "prior",
        "path": None,
        "learning_rate": 0.05,
        "epochs": 200,
        "w_min": 0.01,
        "w_max": 1.0,
        "init": 0.5,
    },
    "attack": {"kind": "confounding", "budgets": [1, 2, 3, 4], "gamma": 0.5, "seed": 0},
    "identify": {"threshold": 0.9, "mode": "all_satisfied"},
    "repair": {"enabled": True, "max_passes": 3},
    "eval": {
        "ratios": [0.25, 0.5, 0.75, 1.0],
        "families": ["empty", "category", "concept", "both"],
        "repeats": 5,
        "seed": 0,
        "budget": 4,
    },
    "bounds": {"budget": 4, "n_max": 50, "slack": 0.02},
    "output": None,
}


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def _merge(base: dict, extra: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        where = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def apply_override(cfg: dict, spec: str) -> dict:
    """Apply one ``dotted.key=value`` override; the value is parsed as YAML."""
    if "=" not in spec:
        raise ConfigError(f"override {spec!r} is not of the form key=value")
    dotted, raw = spec.split("=", 1)
    keys = dotted.strip().split(".")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value in override {spec!r}: {exc}") from None
    patch: dict = value
    for key in reversed(keys):
        patch = {key: patch}
    return _merge(cfg, patch)


def load_config(path: str | Path | None = None, overrides: list[str] | tuple = ()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file {path} does not exist") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a mapping")
        cfg = _merge(cfg, data)
    for spec in overrides:
        cfg = apply_override(cfg, spec)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    s, d, a, i = cfg["schema"], cfg["dataset"], cfg["attack"], cfg["identify"]
    for key in ("K", "M", "k"):
        if not isinstance(s[key], int) or s[key] < 1:
            raise ConfigError(f"schema.{key} must be a positive integer")
    if not isinstance(d["n_samples"], int) or d["n_samples"] < 1:
        raise ConfigError("dataset.n_samples must be a positive integer")
    if not 0.0 <= float(d["noise"]) < 0.5:
        raise ConfigError("dataset.noise must lie in [0, 0.5)")
    if not 0.0 <= float(i["threshold"]) <= 1.0:
        raise ConfigError("identify.threshold must lie in [0, 1]")
    if i["mode"] not in ("all_satisfied", "exact"):
        raise ConfigError("identify.mode must be all_satisfied or exact")
    budgets = a["budgets"]
    if not isinstance(budgets, list) or not all(isinstance(b, int) and b >= 1 for b in budgets):
        raise ConfigError("attack.budgets must be a list of positive integers")
    if not 0.0 <= float(cfg["rules"]["omission_rate"]) < 1.0:
        raise ConfigError("rules.omission_rate must lie in [0, 1)")
    for r in cfg["eval"]["ratios"]:
        if not 0.0 < float(r) <= 1.0:
            raise ConfigError(f"eval.ratios entry {r} outside (0, 1]")
    for fam in cfg["eval"]["families"]:
        if fam not in ("empty", "category", "concept", "both"):
            raise ConfigError(f"unknown eval.families entry {fam!r}")
    for key in ("path",):
        for section in ("rules", "weights"):
            p = cfg[section][key]
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{section}.{key} points at missing file {p}")


def output_dir(cfg: dict, flag: str | None = None) -> Path:
    """Flag beats config beats the environment variable beats ``./runs``."""
    return Path(flag or cfg.get("output") or os.environ.get(OUT_ENV) or DEFAULT_OUT)
