"""Run configuration: an INI-style key/value file plus command-line overrides.

Sections: ``[scenario]``, ``[filter]``, ``[gate]``, ``[paths]``,
``[evaluation]``. Every key is optional; missing keys take the defaults of
the corresponding dataclass. See ``configs/default.ini`` for the full list.
Lists are comma separated; dropout windows are ``start:end`` pairs.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .gate import GateThresholds
from .pipeline import PipelineConfig
from .simulator import Scenario


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    log: str = "out/sensors.jsonl"
    scans: str = ""
    trajectory: str = "out/trajectory.csv"
    map: str = "out/map.xyz"
    report: str = "out/fuse_report"


@dataclass
class EvalConfig:
    tolerance: float = 0.02
    planar: bool = False
    align: bool = False


@dataclass
class RunConfig:
    scenario: Scenario = field(default_factory=Scenario)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    paths: Paths = field(default_factory=Paths)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    voxel_leaf: float = 0.0


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(" ", "").split(",") if v)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _windows(text: str) -> list[tuple[float, float]]:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        a, b = item.split(":")
        out.append((float(a), float(b)))
    return out


_SCENARIO_PARSERS = {
    "seed": int,
    "trajectory_kind": str.strip,
    "dropout_windows": _windows,
    "lio_drift_direction": _floats,
}


def _scenario_from(section) -> Scenario:
    kw: dict = {}
    rates = dict(Scenario().sample_rates)
    names = {f.name for f in fields(Scenario)}
    for key, value in section.items():
        if key.startswith("rate_"):
            rates[key[5:]] = float(value)
        elif key in names and key != "sample_rates":
            kw[key] = _SCENARIO_PARSERS.get(key, float)(value)
        else:
            raise ConfigError(f"[scenario] unknown key {key!r}")
    kw["sample_rates"] = rates
    return Scenario(**kw)


def _pipeline_from(filt, gate_sec) -> PipelineConfig:
    kw: dict = {}
    for key, value in filt.items():
        if key in ("q_diag", "p0_diag"):
            kw[key] = _floats(value)
        elif key == "late_tolerance":
            kw[key] = float(value)
        elif key == "seed_velocity":
            kw[key] = _bool(value)
        else:
            raise ConfigError(f"[filter] unknown key {key!r}")
    th = dict(zip(("threshold_x", "threshold_y", "threshold_z"), GateThresholds().as_tuple()))
    th["hysteresis_fraction"] = 0.0
    for key, value in gate_sec.items():
        if key == "thresholds":
            vals = _floats(value)
            if len(vals) != 3:
                raise ConfigError("[gate] thresholds needs three values")
            th.update(zip(("threshold_x", "threshold_y", "threshold_z"), vals))
        elif key == "hysteresis_fraction":
            th[key] = float(value)
        elif key in ("uncertainty_source", "mode"):
            kw[key] = value.strip()
        elif key in ("reanchor_on_dropout", "retro_anchor"):
            kw[key] = _bool(value)
        elif key == "datum_max_variance":
            kw[key] = float(value)
        else:
            raise ConfigError(f"[gate] unknown key {key!r}")
    kw["thresholds"] = GateThresholds(**th)
    return PipelineConfig(**kw)


def load_config(path: str | Path | None = None) -> RunConfig:
    if path is None:
        return RunConfig()
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    unknown = set(cp.sections()) - {"scenario", "filter", "gate", "paths", "evaluation"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    empty: dict = {}
    try:
        scenario = _scenario_from(cp["scenario"] if cp.has_section("scenario") else empty)
        pipeline = _pipeline_from(cp["filter"] if cp.has_section("filter") else empty,
                                  cp["gate"] if cp.has_section("gate") else empty)
        paths = Paths()
        voxel = 0.0
        if cp.has_section("paths"):
            for key, value in cp["paths"].items():
                if key == "voxel_leaf":
                    voxel = float(value)
                elif hasattr(paths, key):
                    setattr(paths, key, value.strip())
                else:
                    raise ConfigError(f"[paths] unknown key {key!r}")
        ev = EvalConfig()
        if cp.has_section("evaluation"):
            for key, value in cp["evaluation"].items():
                if key == "tolerance":
                    ev.tolerance = float(value)
                elif key in ("planar", "align"):
                    setattr(ev, key, _bool(value))
                else:
                    raise ConfigError(f"[evaluation] unknown key {key!r}")
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if ev.tolerance <= 0 or voxel < 0:
        raise ConfigError(f"{path}: tolerance must be positive and voxel_leaf nonnegative")
    return RunConfig(scenario, pipeline, paths, ev, voxel)
