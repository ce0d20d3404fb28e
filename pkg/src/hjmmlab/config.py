"""Experiment configuration: YAML loading, defaults and validation.

Errors name the offending field and, when the value came from a file, its
line. The resolved configuration (defaults filled in, command-line
overrides applied) is what every run echoes into its outputs.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError
from .zoo import MODEL_NAMES

DEFAULTS: dict = {
    "model": {"name": "hull_white", "file": None, "params": {}},
    "grid": {"z_max": 30.0, "beta": 0.1},
    "simulation": {
        "horizon": 1.0,
        "dt": 0.004,
        "n_paths": 1000,
        "seed": 0,
        "measure": "Q",
        "record_stride": 25,
        "substeps": 1,
        "batch_size": 256,
        "terminal_csv_paths": 0,
    },
    "check": {
        "seed": 0,
        "radius": 1.0,
        "n_pairs": 200,
        "n_samples": 200,
        "phi": "zero",
        "phi_scale": 1.0,
        "positivity_tol": 1e-6,
        "smoothness": True,
        "positivity": True,
        "L": {},
    },
    "diagnostics": {
        "maturities": [1.0, 2.0, 5.0],
        "n_monitor": 8,
        "calibrate": True,
        "levels": [2, 5, 10],
        "ess_floor": 100.0,
        "positivity_threshold": 1e-3,
        "probes": [],
    },
    "output": {"dir": "out"},
}

_TYPES = {
    "grid.z_max": float,
    "grid.beta": float,
    "simulation.horizon": float,
    "simulation.dt": float,
    "simulation.n_paths": int,
    "simulation.seed": int,
    "simulation.measure": str,
    "simulation.record_stride": int,
    "simulation.substeps": int,
    "simulation.batch_size": int,
    "simulation.terminal_csv_paths": int,
    "check.seed": int,
    "check.radius": float,
    "check.n_pairs": int,
    "check.n_samples": int,
    "check.phi_scale": float,
    "check.positivity_tol": float,
    "check.smoothness": bool,
    "check.positivity": bool,
    "diagnostics.n_monitor": int,
    "diagnostics.calibrate": bool,
    "diagnostics.ess_floor": float,
    "diagnostics.positivity_threshold": float,
    "output.dir": str,
}


def _line_map(text: str) -> dict:
    """Dotted key -> 1-based line of each mapping key in a YAML document."""
    out: dict = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {exc}", line=mark.line + 1 if mark else None) from None

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = f"{prefix}{k.value}"
                out[key] = k.start_mark.line + 1
                walk(v, key + ".")

    if root is not None:
        walk(root, "")
    return out


def _merge(base: dict, over: dict, path: str, lines: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown key {key!r}", field=key, line=lines.get(key))
        if isinstance(base[k], dict) and k != "params" and k != "L":
            if not isinstance(v, dict):
                raise ConfigError(f"{key!r} must be a mapping", field=key, line=lines.get(key))
            out[k] = _merge(base[k], v, key + ".", lines)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    """Resolved experiment configuration with the source line of each key."""

    data: dict
    lines: dict = field(default_factory=dict)
    source: Optional[str] = None

    def __getitem__(self, key: str):
        return self.data[key]

    def line(self, key: str) -> Optional[int]:
        return self.lines.get(key)

    def error(self, message: str, key: str) -> ConfigError:
        return ConfigError(message, field=key, line=self.line(key))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=False)

    @property
    def n_steps(self) -> int:
        sim = self.data["simulation"]
        return int(round(sim["horizon"] / sim["dt"]))

    def model_params(self) -> dict:
        """Keyword arguments for :func:`hjmmlab.zoo.build_model`."""
        params = dict(self.data["model"]["params"] or {})
        params["z_max"] = self.data["grid"]["z_max"]
        params["dz"] = self.data["simulation"]["dt"]
        params["beta"] = self.data["grid"]["beta"]
        return params


def _coerce(cfg: dict, lines: dict) -> None:
    for key, typ in _TYPES.items():
        sec, name = key.split(".")
        v = cfg[sec][name]
        if typ is bool:
            if not isinstance(v, bool):
                raise ConfigError(f"{key} must be true or false", field=key, line=lines.get(key))
            continue
        if typ is str:
            if not isinstance(v, str):
                raise ConfigError(f"{key} must be a string", field=key, line=lines.get(key))
            continue
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{key} must be a number", field=key, line=lines.get(key))
        if typ is int:
            if float(v) != int(v):
                raise ConfigError(f"{key} must be an integer", field=key, line=lines.get(key))
            v = int(v)
        cfg[sec][name] = typ(v)


def validate(cfg: dict, lines: Optional[dict] = None) -> None:
    """Raise :class:`ConfigError` naming the first inconsistent field."""
    lines = lines or {}

    def bad(msg, key):
        return ConfigError(msg, field=key, line=lines.get(key))

    _coerce(cfg, lines)
    m = cfg["model"]
    if m["name"] not in MODEL_NAMES:
        raise bad(f"unknown model {m['name']!r}; choose from {', '.join(MODEL_NAMES)}", "model.name")
    if not isinstance(m["params"], dict):
        raise bad("model.params must be a mapping", "model.params")
    g, s, d = cfg["grid"], cfg["simulation"], cfg["diagnostics"]
    if not g["z_max"] > 0:
        raise bad("z_max must be positive", "grid.z_max")
    if not g["beta"] > 0:
        raise bad("beta must be positive", "grid.beta")
    if not s["horizon"] > 0:
        raise bad("horizon must be positive", "simulation.horizon")
    if not s["dt"] > 0:
        raise bad("dt must be positive", "simulation.dt")
    ratio = s["horizon"] / s["dt"]
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise bad(f"dt={s['dt']} does not divide the horizon {s['horizon']}", "simulation.dt")
    zr = g["z_max"] / s["dt"]
    if abs(zr - round(zr)) > 1e-9 * max(1.0, zr):
        raise bad(f"dt={s['dt']} does not divide z_max={g['z_max']}", "grid.z_max")
    for key in ("n_paths", "record_stride", "substeps", "batch_size"):
        if s[key] < 1:
            raise bad(f"{key} must be at least 1", f"simulation.{key}")
    if s["seed"] < 0 or s["seed"] >= 2**64:
        raise bad("seed must be an unsigned 64-bit integer", "simulation.seed")
    if s["measure"] not in ("P", "Q"):
        raise bad("measure must be 'P' or 'Q'", "simulation.measure")
    mats = d["maturities"]
    if not isinstance(mats, list) or not mats:
        raise bad("maturities must be a non-empty list", "diagnostics.maturities")
    for T in mats:
        if isinstance(T, bool) or not isinstance(T, (int, float)) or not T > 0:
            raise bad(f"maturity {T!r} must be a positive number", "diagnostics.maturities")
        if T > g["z_max"]:
            raise bad(f"maturity {T} exceeds z_max={g['z_max']}", "diagnostics.maturities")
        q = T / s["dt"]
        if abs(q - round(q)) > 1e-9 * max(1.0, q):
            raise bad(f"maturity {T} is not a multiple of dt", "diagnostics.maturities")
    d["maturities"] = [float(T) for T in mats]
    levels = d["levels"]
    if (
        not isinstance(levels, list)
        or not levels
        or any(isinstance(v, bool) or not isinstance(v, int) or v <= 0 for v in levels)
        or any(b <= a for a, b in zip(levels, levels[1:]))
    ):
        raise bad("levels must be increasing positive integers", "diagnostics.levels")
    for pr in d["probes"]:
        if not (isinstance(pr, list) and len(pr) == 2):
            raise bad("each probe is a [t, z] pair", "diagnostics.probes")
    if not isinstance(cfg["check"]["L"], dict):
        raise bad("check.L must be a mapping", "check.L")
    for k in cfg["check"]["L"]:
        if k not in ("lipschitz_rn", "growth_rn", "lipschitz_real", "smoothness"):
            raise bad(f"unknown Lipschitz constant {k!r}", f"check.L.{k}")


def resolve(data: Optional[dict] = None, lines: Optional[dict] = None, overrides: Optional[dict] = None,
            base_dir: Optional[Path] = None) -> ExperimentConfig:
    """Merge ``data`` over the defaults, apply ``overrides`` and validate."""
    lines = lines or {}
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping at top level", line=1)
    cfg = _merge(DEFAULTS, data, "", lines)
    for dotted, v in (overrides or {}).items():
        sec, name = dotted.split(".")
        cfg[sec][name] = v
    mfile = cfg["model"].get("file")
    if mfile:
        p = Path(mfile)
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        try:
            fp = yaml.safe_load(p.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read model file: {exc}", field="model.file", line=lines.get("model.file"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"model file is not valid YAML: {exc}", field="model.file") from None
        if not isinstance(fp, dict):
            raise ConfigError("model file must be a mapping", field="model.file")
        fp = dict(fp)
        if "name" in fp:
            cfg["model"]["name"] = fp.pop("name")
        inline = fp.get("params", fp)
        if not isinstance(inline, dict):
            raise ConfigError("model file params must be a mapping", field="model.file")
        cfg["model"]["params"] = {**inline, **(cfg["model"]["params"] or {})}
        cfg["model"]["file"] = None
    validate(cfg, lines)
    return ExperimentConfig(cfg, lines)


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read, merge and validate a YAML experiment file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    lines = _line_map(text)
    data = yaml.safe_load(text)
    cfg = resolve(data, lines, overrides, p.parent)
    cfg.source = str(p)
    return cfg


__all__ = ["DEFAULTS", "ExperimentConfig", "load_config", "resolve", "validate"]
