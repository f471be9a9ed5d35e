"""Run configuration: TOML files, built-in presets and ``--set`` overrides."""
from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from .errors import ConfigError
from .spectral import DeltaBarrierWell, PotentialSpec, QuarticDoubleWell

# Every accepted key with its default.  Time-like sequence values are given in
# units selected by ``sequence.dt_unit`` ("T12", "T26" or "abs").
SCHEMA: dict = {
    "potential": {
        "kind": "delta",
        "half_width": 1.0,
        "barrier_strength": 500.0,
        "mu": 9.6,
        "lam": 4.382,
        "kappa": 1.0,
    },
    "basis": {
        "n_states": 32,
        "n_points": 2049,
        "solver": "auto",
        "span": 0.0,
    },
    "measurement": {
        "delta_phi": 2.0,
        "phi0": "well",
        "threshold": 0.0,
        "quadrature_nodes": 64,
    },
    "sequence": {
        "n_events": 10,
        "dt_unit": "T12",
        "dt_values": [1.0],
        "dt_range": [],
        "series": False,
        "initial": "ground",
        "v0_values": [],
        "prep_events": 10,
        "landscape": "",
        "landscape_points": 40,
        "landscape_step": 0.05,
        "times": [],
        "signs": [],
        "lg": False,
        "workers": 1,
    },
    "output": {
        "path": "-",
        "manifest": True,
    },
    "oracle": {
        "n_points": 513,
        "n_states": 32,
        "events": 3,
        "tolerance": 1e-6,
    },
}

PRESETS: dict = {
    "fig1": {
        "potential": {"kind": "delta", "barrier_strength": 500.0},
        "measurement": {"delta_phi": 1.0},
        "sequence": {"n_events": 10, "dt_values": [0.25, 0.5, 0.75, 1.0, 1.37, 1.5, 2.0],
                     "series": True, "initial": "ground"},
    },
    "fig2": {
        "potential": {"kind": "delta", "barrier_strength": 500.0},
        "measurement": {"delta_phi": 2.0},
        "sequence": {"n_events": 10, "dt_range": [0.01, 2.5, 250], "initial": "ground"},
    },
    "fig3": {
        "potential": {"kind": "delta", "barrier_strength": 500.0},
        "measurement": {"delta_phi": 2.0},
        "sequence": {"n_events": 10, "dt_unit": "T26", "dt_range": [0.2, 4.2, 161],
                     "initial": "packet"},
    },
    "fig3-insert": {
        "potential": {"kind": "delta"},
        "measurement": {"delta_phi": 2.0},
        "sequence": {"n_events": 10, "dt_unit": "T26", "initial": "packet",
                     "v0_values": [50.0, 100.0, 200.0, 500.0, 1000.0]},
    },
    "fig4": {
        "potential": {"kind": "quartic", "mu": 9.6, "lam": 4.382, "kappa": 0.125},
        "measurement": {"delta_phi": 2.0},
        "sequence": {"n_events": 10, "dt_range": [0.01, 2.5, 250], "initial": "ground"},
    },
    "fig5a": {
        "potential": {"kind": "quartic", "mu": 9.6, "lam": 4.382, "kappa": 0.125},
        "measurement": {"delta_phi": 2.0},
        "sequence": {"landscape": "ac--", "prep_events": 10, "landscape_points": 40,
                     "landscape_step": 0.05},
    },
    "fig5b": {
        "potential": {"kind": "quartic", "mu": 9.6, "lam": 4.382, "kappa": 0.125},
        "measurement": {"delta_phi": 2.0},
        "sequence": {"landscape": "bc+-", "prep_events": 10, "landscape_points": 40,
                     "landscape_step": 0.05},
    },
}

_CHOICES = {
    ("potential", "kind"): ("delta", "quartic"),
    ("basis", "solver"): ("auto", "analytic", "grid"),
    ("sequence", "dt_unit"): ("T12", "T26", "abs"),
    ("sequence", "initial"): ("ground", "packet"),
    ("sequence", "landscape"): ("", "ac--", "bc+-"),
}


@dataclass
class RunConfig:
    sections: dict
    preset: str | None = None

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    def potential(self) -> PotentialSpec:
        p = self.sections["potential"]
        if p["kind"] == "delta":
            return DeltaBarrierWell(p["half_width"], p["barrier_strength"], p["kappa"])
        return QuarticDoubleWell(p["mu"], p["lam"], p["kappa"])

    def phi0(self, spec: PotentialSpec) -> float:
        v = self.sections["measurement"]["phi0"]
        if isinstance(v, str):
            if v == "well":
                return spec.well_center
            if v == "-well":
                return -spec.well_center
            raise ConfigError(f"measurement.phi0 must be a number, 'well' or '-well', not {v!r}")
        return float(v)

    def dt_multiples(self) -> list:
        seq = self.sections["sequence"]
        rng = seq["dt_range"]
        if rng:
            if len(rng) != 3 or int(rng[2]) < 1:
                raise ConfigError("sequence.dt_range must be [start, stop, count]")
            start, stop, count = float(rng[0]), float(rng[1]), int(rng[2])
            return [start + (stop - start) * k / (count - 1) if count > 1 else start
                    for k in range(count)]
        return [float(v) for v in seq["dt_values"]]

    def as_dict(self) -> dict:
        return copy.deepcopy(self.sections)


def _coerce(section: str, key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{key} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{section}.{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{key} must be a number")
        value = float(value)
        if math.isnan(value):
            raise ConfigError(f"{section}.{key} must not be nan")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{section}.{key} must be a list")
        return list(value)
    if key == "phi0":
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            return value
        raise ConfigError("measurement.phi0 must be a number or a string")
    if not isinstance(value, str):
        raise ConfigError(f"{section}.{key} must be a string")
    return value


def _merge(target: dict, source: dict, origin: str) -> None:
    for section, body in source.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}] in {origin}")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] in {origin} must be a table")
        for key, value in body.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key} in {origin}")
            target[section][key] = _coerce(section, key, value, SCHEMA[section][key])


def parse_override(text: str) -> tuple[str, str, object]:
    """Split ``section.key=value``; the value is parsed as a TOML literal when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    path, raw = text.split("=", 1)
    parts = path.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"override {text!r} must name section.key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return parts[0], parts[1], value


def _validate(sections: dict) -> None:
    for (section, key), allowed in _CHOICES.items():
        if sections[section][key] not in allowed:
            raise ConfigError(f"{section}.{key} must be one of {allowed}")
    m = sections["measurement"]
    if not m["delta_phi"] > 0:
        raise ConfigError("measurement.delta_phi must be positive")
    b = sections["basis"]
    if b["n_states"] < 2:
        raise ConfigError("basis.n_states must be at least 2")
    if b["n_points"] < 5:
        raise ConfigError("basis.n_points must be at least 5")
    p = sections["potential"]
    if not p["kappa"] > 0:
        raise ConfigError("potential.kappa must be positive")
    if p["kind"] == "delta":
        if not p["half_width"] > 0 or p["barrier_strength"] < 0:
            raise ConfigError("delta well needs half_width > 0 and barrier_strength >= 0")
    elif not (p["mu"] > 0 and p["lam"] > 0):
        raise ConfigError("quartic well needs mu > 0 and lam > 0")
    s = sections["sequence"]
    if s["n_events"] < 1:
        raise ConfigError("sequence.n_events must be at least 1")
    if len(s["signs"]) != len(s["times"]):
        raise ConfigError("sequence.signs and sequence.times must have equal length")
    if any(v not in (-1, 0, 1) for v in s["signs"]):
        raise ConfigError("sequence.signs entries must be -1, 0 or +1")
    if s["workers"] < 1:
        raise ConfigError("sequence.workers must be at least 1")


def load_config(path: str | None = None, overrides=(), preset: str | None = None) -> RunConfig:
    """Defaults, then the preset, then the file, then ``--set`` overrides."""
    sections = copy.deepcopy(SCHEMA)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        _merge(sections, PRESETS[preset], f"preset {preset}")
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        _merge(sections, data, path)
    for text in overrides:
        section, key, value = parse_override(text)
        _merge(sections, {section: {key: value}}, "--set")
    _validate(sections)
    return RunConfig(sections, preset)
