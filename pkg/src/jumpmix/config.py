"""Experiment configuration: JSON schema, validation, defaults, round-trip.

Unknown keys are rejected everywhere so a typo cannot silently change an
experiment; the resolved configuration (defaults filled in, overrides
applied) is written next to every run's outputs and re-running it must
reproduce the outputs byte for byte.
"""

from __future__ import annotations

import json
import os
from typing import Optional

import jsonschema

__all__ = ["ConfigError", "load_config", "resolve", "CONFIG_SCHEMA"]


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


_GRID = {
    "oneOf": [
        {"type": "array", "items": {"type": "number"}, "minItems": 1},
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["start", "stop", "num"],
            "properties": {
                "start": {"type": "number"},
                "stop": {"type": "number"},
                "num": {"type": "integer", "minimum": 2},
            },
        },
    ]
}

_VEC = {"type": "array", "items": {"type": "number"}, "minItems": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["system", "seed"],
    "properties": {
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["preset"],
            "properties": {
                "preset": {"type": "string"},
                "params": {"type": "object"},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "replicas": {"type": "integer", "minimum": 1},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "threads": {"type": ["integer", "null"], "minimum": 1},
        "batch_size": {"type": "integer", "minimum": 1},
        "trajectories": {"type": "integer", "minimum": 0},
        "x0": _VEC,
        "coupling": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "x_hat": {"oneOf": [_VEC, {"type": "null"}]},
                "r": {"type": "number", "exclusiveMinimum": 0},
                "m": {"type": "integer", "minimum": 1},
                "hit_mode": {"enum": ["exact-density", "shooting", "independent"]},
                "R": {"type": ["number", "null"]},
                "shoot_iters": {"type": "integer", "minimum": 1},
                "shoot_tol": {"type": "number", "exclusiveMinimum": 0},
                "x0": _VEC,
                "x0_prime": _VEC,
            },
        },
        "moments": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k_max": {"type": "integer", "minimum": 1},
                "t_grid": _GRID,
            },
        },
        "mixing": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t_grid": _GRID,
                "bins": {"type": "integer", "minimum": 2},
                "keep_blocks": {"type": "array", "items": {"type": "integer", "minimum": 1}},
            },
        },
        "check": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha": {"type": ["number", "null"]},
                "beta": {"type": ["number", "null"]},
                "n_samples": {"type": "integer", "minimum": 1},
                "sample_radius": {"type": "number", "exclusiveMinimum": 0},
                "max_gen": {"type": "integer", "minimum": 1},
                "rank_tol": {"type": "number", "exclusiveMinimum": 0},
                "solid_m": {"type": ["integer", "null"], "minimum": 1},
                "solid_probes": {"type": "integer", "minimum": 1},
                "probe_norms": {"type": "array", "items": {"type": "number"}},
            },
        },
        "steering": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "targets": {"type": "integer", "minimum": 1},
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "time_budget": {"type": "number", "exclusiveMinimum": 0},
                "target_norm": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "network": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ray_scale": {"type": "number", "exclusiveMinimum": 0},
                "ray_points": {"type": "integer", "minimum": 2},
            },
        },
    },
}

DEFAULTS = {
    "replicas": 1000,
    "horizon": 20.0,
    "threads": None,
    "batch_size": 2048,
    "trajectories": 10,
    "coupling": {
        "x_hat": None, "r": 0.5, "m": 1, "hit_mode": "exact-density", "R": None,
        "shoot_iters": 20, "shoot_tol": 1e-8,
    },
    "moments": {"k_max": 10, "t_grid": {"start": 0.0, "stop": 10.0, "num": 21}},
    "mixing": {"t_grid": {"start": 0.0, "stop": 15.0, "num": 25}, "bins": 60,
               "keep_blocks": [1, 5, 10]},
    "check": {"alpha": None, "beta": None, "n_samples": 1000, "sample_radius": 10.0,
              "max_gen": 8, "rank_tol": 1e-8, "solid_m": None, "solid_probes": 32,
              "probe_norms": [0.0, 0.5, 1.0, 2.0, 4.0, 8.0]},
    "steering": {"targets": 10, "epsilon": 1e-2, "time_budget": 100.0,
                 "target_norm": 2.0},
    "network": {"ray_scale": 6.283185307179586, "ray_points": 8},
}


def expand_grid(g) -> list:
    if isinstance(g, dict):
        start, stop, num = g["start"], g["stop"], g["num"]
        step = (stop - start) / (num - 1)
        return [start + i * step for i in range(num)]
    return [float(v) for v in g]


def _merge_defaults(cfg: dict) -> dict:
    out = json.loads(json.dumps(cfg))   # deep copy via round-trip
    for key, val in DEFAULTS.items():
        if isinstance(val, dict):
            block = dict(val)
            block.update(out.get(key, {}))
            out[key] = block
        else:
            out.setdefault(key, val)
    out["system"].setdefault("params", {})
    return out


def resolve(cfg: dict, overrides: Optional[dict] = None) -> dict:
    """Validate, fill defaults, and apply command-line overrides."""
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config validation failed: {exc.message}") from exc
    out = _merge_defaults(cfg)
    for key, val in (overrides or {}).items():
        if val is not None:
            out[key] = val
    try:
        jsonschema.validate(out, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"resolved config invalid: {exc.message}") from exc
    return out


def load_config(path: str, overrides: Optional[dict] = None) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return resolve(cfg, overrides)
