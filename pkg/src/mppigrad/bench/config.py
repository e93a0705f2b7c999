"""Versioned YAML run configuration for the benchmark harness.

A config document has a `version: 1` header, an `experiment` id, and nested
sections whose defaults are filled in here so that every emitted snapshot is
fully resolved (re-runnable with no reference to the original file).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import yaml

from ..errors import ConfigError
from ..problems import DEFAULT_OBSTACLES

SCHEMA_VERSION = 1
EXPERIMENTS = ("lqr", "dubins", "theory")

_LQR_DEFAULTS: Dict[str, Any] = {
    "problem": {"horizon": 10},
    "sampling": {"sigma2": 1.0e-4, "tau": 1.0},
    "optimizer": {
        "n_samples": 1000,
        "iterations": 2000,
        "antithetic": True,
        "eps_stat": 0.0,
        "max_retries": 5,
    },
    "grid": {"eta": [1.0, "rule"]},
    "fd": {"enabled": False, "h": 1.0e-3, "alpha": 1.0e-3, "budget_evals": 220_000},
    "seeds": [0, 1, 2],
}

_DUBINS_DEFAULTS: Dict[str, Any] = {
    "problem": {
        "speed": 4.0,
        "dt": 0.1,
        "horizon": 20,
        "x0": [0.0, 0.0, float(np.pi / 2)],
        "target": [6.0, 6.0, 0.0],
        "q_weights": [1.0, 1.0, 0.01],
        "r_weight": 0.001,
        "w_max": float(1.5 * np.pi),
        "obstacles": [list(row) for row in DEFAULT_OBSTACLES],
    },
    "sampling": {"sigma2": 0.25, "tau": 4.0},
    "optimizer": {
        "n_samples": 1024,
        "eta": 1.0,
        "antithetic": True,
        "eps_stat": 0.0,
        "max_retries": 5,
    },
    "sim_steps": 40,
    "grid": {"k": [1, 5, 10]},
    "seeds": [0, 1, 2],
}

_THEORY_DEFAULTS: Dict[str, Any] = {"inject_bug": False, "seeds": [0]}

_DEFAULTS = {"lqr": _LQR_DEFAULTS, "dubins": _DUBINS_DEFAULTS, "theory": _THEORY_DEFAULTS}


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass(frozen=True)
class RunConfig:
    """Fully-resolved run configuration (defaults merged, overrides applied)."""

    experiment: str
    resolved: Dict[str, Any]

    @property
    def seeds(self) -> List[int]:
        return list(self.resolved["seeds"])

    @property
    def out_dir(self) -> Optional[str]:
        return self.resolved.get("out")

    def section(self, name: str) -> Dict[str, Any]:
        return self.resolved.get(name, {})

    def grid(self, key: str, fallback: list) -> list:
        return list(self.resolved.get("grid", {}).get(key, fallback))

    def snapshot(self) -> Dict[str, Any]:
        doc = copy.deepcopy(self.resolved)
        doc["version"] = SCHEMA_VERSION
        doc["experiment"] = self.experiment
        return doc

    def write_snapshot(self, path: Union[str, Path]) -> None:
        Path(path).write_text(
            yaml.safe_dump(self.snapshot(), sort_keys=True, default_flow_style=None),
            encoding="utf-8",
        )


def _validate(doc: Dict[str, Any]) -> None:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    version = doc.get("version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {version!r} (expected {SCHEMA_VERSION})")
    experiment = doc.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {experiment!r}")


def _validate_resolved(experiment: str, resolved: Dict[str, Any]) -> None:
    seeds = resolved.get("seeds")
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a non-empty list of integers")
    for key, values in resolved.get("grid", {}).items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid entry {key!r} must be a non-empty list")
    if experiment == "lqr":
        for key in ("sigma2", "tau"):
            if key in resolved.get("grid", {}):
                continue
            if resolved["sampling"][key] <= 0:
                raise ConfigError(f"sampling.{key} must be positive")
        for eta in resolved["grid"].get("eta", [resolved["optimizer"].get("eta", 1.0)]):
            if eta != "rule" and (not isinstance(eta, (int, float)) or eta <= 0):
                raise ConfigError(f"eta cell {eta!r} must be positive or the string 'rule'")
    if experiment == "dubins" and resolved.get("sim_steps", 0) < 1:
        raise ConfigError("sim_steps must be >= 1")


def load_config(
    path: Union[str, Path],
    seed_override: Optional[int] = None,
    out_override: Optional[str] = None,
    grid_overrides: Optional[Dict[str, list]] = None,
) -> RunConfig:
    """Load, validate, and resolve a config file; apply CLI overrides."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    _validate(doc)
    experiment = doc["experiment"]
    user = {k: v for k, v in doc.items() if k not in ("version", "experiment")}
    resolved = _deep_merge(_DEFAULTS[experiment], user)
    if seed_override is not None:
        resolved["seeds"] = [int(seed_override)]
    if out_override is not None:
        resolved["out"] = str(out_override)
    if grid_overrides:
        resolved.setdefault("grid", {})
        for key, values in grid_overrides.items():
            resolved["grid"][key] = values
    _validate_resolved(experiment, resolved)
    return RunConfig(experiment=experiment, resolved=resolved)


def parse_grid_override(text: str) -> tuple[str, list]:
    """Parse a CLI `key=v1,v2,...` grid override; values go through YAML."""
    if "=" not in text:
        raise ConfigError(f"grid override {text!r} must look like key=v1,v2,...")
    key, _, raw = text.partition("=")
    key = key.strip()
    values = [yaml.safe_load(tok) for tok in raw.split(",") if tok.strip() != ""]
    if not key or not values:
        raise ConfigError(f"grid override {text!r} must name a key and at least one value")
    return key, values
