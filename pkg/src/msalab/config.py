"""Run configuration: a JSON tree with ensemble, dynamics, schedule and experiment blocks.

Every key is checked against a schema; unknown keys and out-of-range values
raise ConfigError carrying the dotted field path.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .dynamics import FrequencyMatrix, diophantine_frequency
from .randelette import make_ensemble

__all__ = ["ConfigError", "RunConfig", "load_config", "resolve", "SCHEMA"]


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


def _int(lo=None):
    def check(path, v):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(path, "must be an integer")
        if lo is not None and v < lo:
            raise ConfigError(path, f"must be >= {lo}")
        return v
    return check


def _real(lo=None, strict=False, allow_none=False):
    def check(path, v):
        if v is None and allow_none:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(path, "must be a finite number")
        if lo is not None and (v <= lo if strict else v < lo):
            raise ConfigError(path, f"must be {'>' if strict else '>='} {lo}")
        return float(v)
    return check


def _choice(*opts):
    def check(path, v):
        if v not in opts:
            raise ConfigError(path, f"must be one of {', '.join(map(str, opts))}")
        return v
    return check


def _list(item, allow_none=False, min_len=0):
    def check(path, v):
        if v is None and allow_none:
            return None
        if not isinstance(v, list):
            raise ConfigError(path, "must be a list")
        if len(v) < min_len:
            raise ConfigError(path, f"needs at least {min_len} entries")
        return [item(f"{path}[{i}]", x) for i, x in enumerate(v)]
    return check


def _freq_rows(path, v):
    if v is None:
        return None
    if not isinstance(v, list) or not v:
        raise ConfigError(path, "must be a non-empty list of rows of decimal strings")
    rows = []
    for i, row in enumerate(v):
        if not isinstance(row, list) or not row:
            raise ConfigError(f"{path}[{i}]", "must be a non-empty list")
        for j, s in enumerate(row):
            if not isinstance(s, str):
                raise ConfigError(f"{path}[{i}][{j}]", "frequencies must be decimal strings")
            try:
                float(s)
            except ValueError:
                raise ConfigError(f"{path}[{i}][{j}]", f"not a decimal number: {s!r}") from None
        rows.append(list(row))
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(path, "rows must have equal length")
    return rows


def _bool(path, v):
    if not isinstance(v, bool):
        raise ConfigError(path, "must be true or false")
    return v


# block -> key -> (validator, default)
SCHEMA = {
    "ensemble": {
        "M": (_int(1), 1),
        "c": (_real(0, strict=True, allow_none=True), None),
        "N_max": (_int(0), 40),
        "seed": (_int(0), 0),
    },
    "dynamics": {
        "kind": (_choice("golden", "silver", "custom"), "golden"),
        "nu": (_int(1), 1),
        "d": (_int(1), 1),
        "frequencies": (_freq_rows, None),
        "usr_A": (_real(0, strict=True), 1.0),
        "usr_R": (_int(1), 1000),
        "div_R": (_int(0), 50),
        "div_trials": (_int(1), 1000),
    },
    "schedule": {
        "L0": (_int(3), 6),
        "g": (_real(0), 20.0),
        "m": (_real(0, strict=True), 1.0),
    },
    "experiment": {
        "samples": (_int(1), 1000),
        "L": (_int(0), 8),
        "g_list": (_list(_real(0), allow_none=True), None),
        "E": (_real(), 0.0),
        "grid": (_list(_real(0)), []),
        "J": (_int(1), 2),
        "k": (_int(0), 0),
        "energies": (_list(_real()), [0.0]),
        "include_spectral": (_bool, False),
        "hull_points": (_int(2), 1001),
        "lvb_radius": (_int(1), 8),
        "lvb_trials": (_int(2), 8),
        "gri_instances": (_int(1), 100),
        "gri_host_radius": (_int(1), 8),
        "gri_inner_radius": (_int(0), 2),
        "bins": (_int(1), 50),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration tree (plain dict per block)."""

    ensemble: dict
    dynamics: dict
    schedule: dict
    experiment: dict

    def to_dict(self) -> dict:
        return {"ensemble": dict(self.ensemble), "dynamics": dict(self.dynamics),
                "schedule": dict(self.schedule), "experiment": dict(self.experiment)}

    @property
    def g_list(self) -> list[float]:
        gl = self.experiment["g_list"]
        return list(gl) if gl else [self.schedule["g"]]

    def frequencies(self) -> FrequencyMatrix:
        dyn = self.dynamics
        if dyn["frequencies"] is not None:
            fm = FrequencyMatrix.from_strings(dyn["frequencies"])
            if fm.d != dyn["d"] or fm.nu != dyn["nu"]:
                raise ConfigError("dynamics.frequencies", f"shape ({fm.d}, {fm.nu}) does not match d, nu")
            return fm
        if dyn["kind"] == "custom":
            raise ConfigError("dynamics.frequencies", "required when kind is custom")
        return diophantine_frequency(dyn["kind"], nu=dyn["nu"], d=dyn["d"])

    def ensemble_obj(self):
        e = self.ensemble
        try:
            return make_ensemble(e["M"], e["c"], e["N_max"], self.dynamics["nu"])
        except ValueError as exc:
            raise ConfigError("ensemble.c", str(exc)) from None


def resolve(tree: dict) -> RunConfig:
    """Validate a raw tree and fill defaults."""
    if not isinstance(tree, dict):
        raise ConfigError("<root>", "configuration must be an object")
    for key in tree:
        if key not in SCHEMA:
            raise ConfigError(key, "unknown block")
    blocks = {}
    for name, fields in SCHEMA.items():
        raw = tree.get(name, {})
        if not isinstance(raw, dict):
            raise ConfigError(name, "must be an object")
        for key in raw:
            if key not in fields:
                raise ConfigError(f"{name}.{key}", "unknown key")
        blocks[name] = {key: check(f"{name}.{key}", raw[key]) if key in raw else default
                        for key, (check, default) in fields.items()}
    cfg = RunConfig(**blocks)
    cfg.frequencies()
    cfg.ensemble_obj()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        tree = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return resolve(tree)
