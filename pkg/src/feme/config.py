"""Run configuration: a YAML file with one section per concern.

Unknown keys are rejected.  Command-line flags override file values, and the
effective configuration is echoed next to the outputs so a run can be
repeated from its own echo.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np
import yaml

from .core import ModelParams
from .dynamics import DEFAULT_DT, DEFAULT_T_END, IntegratorConfig
from .measures import DEFAULT_GRID_STEP
from .sweep import DEFAULT_AXIS, DEFAULT_SWEEP_STEP


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration: " + "; ".join(self.problems))


DEFAULTS = {
    "model": {"omega0": 1.0, "lambda0": 0.08, "g": 0.066, "beta": 2.0, "n_units": 20},
    "integrator": {"dt": DEFAULT_DT, "t_end": DEFAULT_T_END, "sample_every": 1, "picture": "interaction"},
    "measure": {"grid_step": DEFAULT_GRID_STEP, "restrict_phi": True, "refine": True, "theta": 1.69, "phi": 0.0},
    "sweep": {
        "lambda0": {"min": DEFAULT_AXIS[0], "max": DEFAULT_AXIS[1], "points": DEFAULT_AXIS[2], "scale": "linear"},
        "g": {"min": DEFAULT_AXIS[0], "max": DEFAULT_AXIS[1], "points": DEFAULT_AXIS[2], "scale": "linear"},
        "n_units": [5, 50, 100],
        "grid_step": DEFAULT_SWEEP_STEP,
        "synthetic_ridge": None,
    },
    "trscan": {
        "n_units": [5, 50, 100],
        "lambda0": {"min": 0.01, "max": 0.1, "points": 6, "scale": "log"},
        "a_n": {},
    },
    "output": {"directory": "out", "format": "csv", "precision": 12},
    "workers": 1,
}

_AXIS_KEYS = {"min", "max", "points", "scale"}


def _merge(base, override, path, problems):
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            problems.append(f"unknown key {where!r}")
        elif isinstance(base[key], dict) and where != "trscan.a_n":
            if not isinstance(value, dict):
                problems.append(f"{where!r} must be a mapping")
            else:
                _merge(base[key], value, where, problems)
        else:
            base[key] = value


@dataclass(frozen=True)
class RunConfig:
    data: dict

    @classmethod
    def from_dict(cls, raw: dict | None) -> "RunConfig":
        data = copy.deepcopy(DEFAULTS)
        problems: list[str] = []
        if raw is not None and not isinstance(raw, dict):
            raise ConfigError(["top level must be a mapping"])
        _merge(data, raw or {}, "", problems)
        if problems:
            raise ConfigError(problems)
        cfg = cls(data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError([f"cannot parse {path}: {exc}"]) from exc
        return cls.from_dict(raw)

    def override(self, **flat) -> "RunConfig":
        """Apply ``section__key=value`` overrides, skipping None values."""
        raw = copy.deepcopy(self.data)
        for name, value in flat.items():
            if value is None:
                continue
            node = raw
            *parents, leaf = name.split("__")
            for p in parents:
                node = node[p]
            node[leaf] = value
        return RunConfig.from_dict(raw)

    def dump(self) -> str:
        return yaml.safe_dump(_plain(self.data), sort_keys=True)

    # typed views

    def model(self) -> ModelParams:
        return ModelParams(**self.data["model"])

    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(**self.data["integrator"])

    def axis(self, section: str, name: str) -> np.ndarray:
        spec = self.data[section][name]
        if spec["scale"] == "log":
            return np.geomspace(spec["min"], spec["max"], spec["points"])
        return np.linspace(spec["min"], spec["max"], spec["points"])

    def validate(self) -> None:
        problems = []
        d = self.data
        try:
            self.model()
        except (ValueError, TypeError) as exc:
            problems.append(f"model: {exc}")
        try:
            self.integrator()
        except (ValueError, TypeError) as exc:
            problems.append(f"integrator: {exc}")
        m = d["measure"]
        if not _positive(m["grid_step"]):
            problems.append("measure.grid_step must be > 0")
        for key in ("restrict_phi", "refine"):
            if not isinstance(m[key], bool):
                problems.append(f"measure.{key} must be true or false")
        for key in ("theta", "phi"):
            if not (_number(m[key]) and 0 <= m[key] < math.pi):
                problems.append(f"measure.{key} must lie in [0, pi)")
        for section in ("sweep", "trscan"):
            for axis in ("lambda0",) + (("g",) if section == "sweep" else ()):
                problems += _axis_problems(f"{section}.{axis}", d[section][axis])
            sizes = d[section]["n_units"]
            if not (isinstance(sizes, list) and sizes and all(_int(n) and n >= 1 for n in sizes)):
                problems.append(f"{section}.n_units must be a nonempty list of integers >= 1")
        if not _positive(d["sweep"]["grid_step"]):
            problems.append("sweep.grid_step must be > 0")
        ratio = d["sweep"]["synthetic_ridge"]
        if ratio is not None and not _positive(ratio):
            problems.append("sweep.synthetic_ridge must be null or > 0")
        a_n = d["trscan"]["a_n"]
        if not isinstance(a_n, dict) or not all(_int(k) and _positive(v) for k, v in a_n.items()):
            problems.append("trscan.a_n must map integer N to a positive ratio")
        out = d["output"]
        if not isinstance(out["directory"], str) or not out["directory"]:
            problems.append("output.directory must be a nonempty string")
        if out["format"] not in ("csv", "json"):
            problems.append("output.format must be 'csv' or 'json'")
        if not (_int(out["precision"]) and 1 <= out["precision"] <= 17):
            problems.append("output.precision must be an integer in [1, 17]")
        if not (_int(d["workers"]) and d["workers"] >= 0):
            problems.append("workers must be an integer >= 0 (0 = all cores)")
        if problems:
            raise ConfigError(problems)


def _number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _positive(x) -> bool:
    return _number(x) and x > 0


def _int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _axis_problems(where, spec) -> list:
    if not isinstance(spec, dict) or set(spec) - _AXIS_KEYS:
        return [f"{where} must be a mapping with keys {sorted(_AXIS_KEYS)}"]
    problems = []
    lo, hi, num, scale = spec.get("min"), spec.get("max"), spec.get("points"), spec.get("scale")
    if scale not in ("linear", "log"):
        problems.append(f"{where}.scale must be 'linear' or 'log'")
    if not (_number(lo) and lo >= 0 and (scale != "log" or lo > 0)):
        problems.append(f"{where}.min must be a number >= 0 (> 0 for log scale)")
    if not (_int(num) and num >= 1):
        problems.append(f"{where}.points must be an integer >= 1")
    if not (_number(hi) and _number(lo) and (hi > lo or (hi == lo and num == 1))):
        problems.append(f"{where}.max must exceed min")
    return problems


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
