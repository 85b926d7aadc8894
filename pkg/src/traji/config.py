"""JSON run configuration: validation and default materialization."""
from __future__ import annotations

import copy
import dataclasses
import json

from .ais import DEFAULT_COLUMNS

CONFIG_VERSION = 1
REQUIRED = object()


class ConfigError(ValueError):
    pass


TRAIN_SCHEMA = {
    "version": REQUIRED,
    "family": REQUIRED,
    "agent": None,
    "seeds": [0],
    "env": {"epsilon": 0.1, "smoothing": 0.9, "margin": 0.1},
    "hyper": {},
    "eval": {"n_refs": 10, "eval_seed": 12345},
    "checkpoint_every": 10,
    "out_dir": "runs",
}

AIS_SCHEMA = {
    "version": REQUIRED,
    "input": None,
    "columns": dict(DEFAULT_COLUMNS),
    "region": None,
    "exclude": [],
    "min_sog": 3.0,
    "segment": {"stop_gap_hours": 1.0, "min_points": 900, "slow_sog": 0.5, "max_speed": 50.0,
                "max_sog_gap": 30.0},
    "kink_threshold": 10.0,
    "per_cluster": 170,
    "seed": 0,
    "out_dir": "ais_out",
    "train": {"labels": ["up", "down"], "epsilon_km": 0.5, "smoothing": 0.9, "margin": 0.1,
              "max_steps": None, "hyper": {}},
    "detect": {"label": "up", "test_label": "other", "start_region": None, "quantile": 0.9,
               "checkpoint": None},
}

# values that are free-form maps rather than nested sections
OPAQUE = {"family", "hyper", "region", "start_region", "columns"}


def _resolve(user, schema, path=""):
    if not isinstance(user, dict):
        raise ConfigError(f"config section {path or '<root>'!r} must be an object")
    unknown = sorted(set(user) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config key {path + unknown[0]!r}")
    out = {}
    for key, default in schema.items():
        name = path + key
        if key not in user:
            if default is REQUIRED:
                raise ConfigError(f"missing config key {name!r}")
            out[key] = copy.deepcopy(default)
        elif isinstance(default, dict) and key not in OPAQUE:
            out[key] = _resolve(user[key], default, name + ".")
        else:
            out[key] = copy.deepcopy(user[key])
    return out


def resolve(user: dict, schema: dict) -> dict:
    cfg = _resolve(user, schema)
    if cfg["version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {cfg['version']!r}; expected {CONFIG_VERSION}")
    return cfg


def resolve_hyper(cls, hyper: dict, path: str = "hyper"):
    """Instantiate an agent config dataclass, rejecting unknown keys."""
    names = [f.name for f in dataclasses.fields(cls)]
    unknown = sorted(set(hyper) - set(names))
    if unknown:
        raise ConfigError(f"unknown config key {path + '.' + unknown[0]!r}")
    try:
        return cls(**hyper)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {path}: {exc}") from exc


def load(path, schema: dict) -> dict:
    try:
        with open(path) as fh:
            user = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return resolve(user, schema)


def dump(cfg: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
