"""Strict JSON run configuration.

Every key is optional; an empty object reproduces the default benchmark.
Unknown keys and mistyped values are rejected before anything runs::

    {
      "disk":      {"I_n": 2.4e-4, "m": 0.076, "g": 9.81, "l": 0.041,
                    "tau": 0.4, "K_m": 11.0, "t_s": 0.01},
      "x0": [-6.0, 0.0], "x_ref": [0.0, 0.0], "steps": 100,
      "mpc":       {"N": 10, "Q": [[8, 0], [0, 0.1]], "R": [[0.5]],
                    "state_lower": [...], "state_upper": [...],
                    "input_lower": [-10], "input_upper": [10],
                    "max_iter_inner": 1, "eps_inner": 1e-7,
                    "max_iter_inner_first_step": 10, "warm_start_steps": 1,
                    "constrain_total_input": true, "qp_tol": 1e-8, "qp_max_iter": 200},
      "tube":      {"delta1": null, "xi_interval": [3.14159, 6.28318], "containment_tol": 1e-8},
      "synthesis": {"p_nominal": 1.0, "grid_points": 41, "grid_theta_range": [-6.28, 6.28]},
      "regulation": {"theta_tol": 0.05, "omega_tol": 0.5},
      "with_tubes": true, "enforce_delta1_in_qp": false, "seed": 0,
      "output_dir": "runs/default"
    }
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from pathlib import Path

from .bench import BenchmarkScenario


class ConfigError(ValueError):
    pass


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_list(value, path):
    if not isinstance(value, list):
        raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
    for j, item in enumerate(value):
        if isinstance(item, list):
            _check_list(item, f"{path}[{j}]")
        elif not _is_number(item):
            raise ConfigError(f"{path}[{j}]: expected a number, got {item!r}")
    return value


def _convert(value, hint, path):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, path)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(value, inner[0], path)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if not _is_number(value):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if hint is list or origin is list:
        return _check_list(value, path)
    raise ConfigError(f"{path}: unsupported field type {hint}")


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown configuration key {where}{unknown[0]}")
    kwargs = {k: _convert(v, hints[k], f"{path}.{k}" if path else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def parse_config(data):
    """Return ``(scenario, output_dir)`` from a decoded JSON object."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    data = dict(data)
    out = data.pop("output_dir", None)
    if out is not None and not isinstance(out, str):
        raise ConfigError("output_dir: expected a string")
    scenario = _build(BenchmarkScenario, data, "")
    if len(scenario.x0) != 2 or len(scenario.x_ref) != 2:
        raise ConfigError("x0 and x_ref must have two entries")
    if scenario.steps < 1:
        raise ConfigError("steps must be at least 1")
    return scenario, out


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return parse_config(data)
