"""Sensor record types and the JSONL log format.

One record per line, ``{"t": <s>, "type": "gps"|"imu"|"lio"|"truth", ...}``.
Field names, units and ordering are documented in ``schema/records.md``.
Matrices are written row-major as flat lists; angles are radians.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Union

import numpy as np

from .geodesy import GeoFix

# tie-break order for simultaneous timestamps: differential before absolute
TYPE_RANK = {"imu": 0, "gps": 1, "lio": 2, "truth": 3}


class RecordParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class ImuSample:
    """Orientation in the ENU frame; acceleration is specific force with
    gravity (9.80665 m/s^2) already removed, in the body frame."""

    timestamp: float
    orientation: np.ndarray          # roll, pitch, yaw
    angular_velocity: np.ndarray     # body rates, rad/s
    linear_acceleration: np.ndarray  # body frame, m/s^2
    orientation_covariance: np.ndarray = field(default_factory=lambda: np.eye(3) * 1e-6)
    angular_velocity_covariance: np.ndarray = field(default_factory=lambda: np.eye(3) * 1e-6)
    linear_acceleration_covariance: np.ndarray = field(default_factory=lambda: np.eye(3) * 1e-4)

    def __post_init__(self):
        for name in ("orientation", "angular_velocity", "linear_acceleration"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        for name in ("orientation_covariance", "angular_velocity_covariance",
                     "linear_acceleration_covariance"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3, 3))


@dataclass
class LioOdometry:
    timestamp: float
    position: np.ndarray
    orientation: np.ndarray  # quaternion x, y, z, w
    pose_covariance: np.ndarray = field(default_factory=lambda: np.eye(6) * 1e-4)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        q = np.asarray(self.orientation, dtype=float).reshape(4)
        self.orientation = q / np.linalg.norm(q)
        self.pose_covariance = np.asarray(self.pose_covariance, dtype=float).reshape(6, 6)


@dataclass
class TruthSample:
    """Ground truth in the odom frame (vehicle frame at t = 0)."""

    timestamp: float
    position: np.ndarray
    orientation: np.ndarray  # roll, pitch, yaw
    velocity: np.ndarray
    acceleration: np.ndarray


Payload = Union[GeoFix, ImuSample, LioOdometry, TruthSample]


@dataclass
class SensorRecord:
    timestamp: float
    payload: Payload

    @property
    def kind(self) -> str:
        return _KIND[type(self.payload)]


_KIND = {GeoFix: "gps", ImuSample: "imu", LioOdometry: "lio", TruthSample: "truth"}


def merge_streams(*streams: Iterable[SensorRecord]) -> list[SensorRecord]:
    """Stable merge by (timestamp, type rank); per-stream order is kept."""
    merged = [r for s in streams for r in s]
    return sorted(merged, key=lambda r: (r.timestamp, TYPE_RANK[r.kind]))


def _flat(a) -> list[float]:
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def record_to_dict(rec: SensorRecord) -> dict:
    p = rec.payload
    d: dict = {"t": float(rec.timestamp), "type": rec.kind}
    if isinstance(p, GeoFix):
        d.update(lat=float(p.latitude), lon=float(p.longitude), alt=float(p.altitude),
                 cov=_flat(p.position_covariance), fix=bool(p.fix_valid))
    elif isinstance(p, ImuSample):
        d.update(rpy=_flat(p.orientation), gyro=_flat(p.angular_velocity),
                 accel=_flat(p.linear_acceleration),
                 rpy_cov=_flat(p.orientation_covariance),
                 gyro_cov=_flat(p.angular_velocity_covariance),
                 accel_cov=_flat(p.linear_acceleration_covariance))
    elif isinstance(p, LioOdometry):
        d.update(pos=_flat(p.position), quat=_flat(p.orientation), cov=_flat(p.pose_covariance))
    else:
        d.update(pos=_flat(p.position), rpy=_flat(p.orientation), vel=_flat(p.velocity),
                 acc=_flat(p.acceleration))
    return d


def _vec(d: dict, key: str, n: int) -> np.ndarray:
    try:
        v = np.asarray(d[key], dtype=float)
    except KeyError:
        raise ValueError(f"missing field {key!r}") from None
    except (TypeError, ValueError):
        raise ValueError(f"field {key!r} is not numeric") from None
    if v.size != n:
        raise ValueError(f"field {key!r} has {v.size} entries, expected {n}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"field {key!r} has non-finite entries")
    return v


def record_from_dict(d: dict) -> SensorRecord:
    if not isinstance(d, dict):
        raise ValueError("record is not a JSON object")
    t = d.get("t")
    if not isinstance(t, (int, float)) or isinstance(t, bool) or not math.isfinite(t):
        raise ValueError("missing or non-finite timestamp 't'")
    t = float(t)
    kind = d.get("type")
    if kind == "gps":
        lat, lon, alt = (float(_vec(d, k, 1).reshape(-1)[0]) for k in ("lat", "lon", "alt"))
        payload = GeoFix(t, lat, lon, alt, _vec(d, "cov", 9).reshape(3, 3), bool(d.get("fix", True)))
    elif kind == "imu":
        payload = ImuSample(t, _vec(d, "rpy", 3), _vec(d, "gyro", 3), _vec(d, "accel", 3),
                            _vec(d, "rpy_cov", 9), _vec(d, "gyro_cov", 9), _vec(d, "accel_cov", 9))
    elif kind == "lio":
        q = _vec(d, "quat", 4)
        if np.linalg.norm(q) < 1e-9:
            raise ValueError("zero quaternion")
        payload = LioOdometry(t, _vec(d, "pos", 3), q, _vec(d, "cov", 36))
    elif kind == "truth":
        payload = TruthSample(t, _vec(d, "pos", 3), _vec(d, "rpy", 3), _vec(d, "vel", 3),
                              _vec(d, "acc", 3))
    else:
        raise ValueError(f"unknown record type {kind!r}")
    return SensorRecord(t, payload)


def dumps(rec: SensorRecord) -> str:
    return json.dumps(record_to_dict(rec), separators=(",", ":"))


def write_jsonl(path, records: Iterable[SensorRecord]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec))
            fh.write("\n")
            n += 1
    return n


def iter_jsonl(path) -> Iterator[SensorRecord]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield record_from_dict(json.loads(line))
            except (ValueError, json.JSONDecodeError) as exc:
                raise RecordParseError(str(exc), lineno) from exc


def read_jsonl(path) -> list[SensorRecord]:
    return list(iter_jsonl(path))


# -- scan files ---------------------------------------------------------------
# {"t": <s>, "points": [[x, y, z], ...], "ids": [..]} one scan per line, body frame

def write_scans(path, scans) -> int:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sc in scans:
            d = {"t": float(sc.timestamp),
                 "points": [[float(v) for v in p] for p in np.asarray(sc.points).reshape(-1, 3)],
                 "ids": [int(i) for i in sc.ids]}
            fh.write(json.dumps(d, separators=(",", ":")) + "\n")
    return len(scans)


def read_scans(path) -> list:
    from .simulator import Scan

    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                pts = np.asarray(d["points"], dtype=float).reshape(-1, 3)
                ids = np.asarray(d.get("ids", range(len(pts))), dtype=int)
                out.append(Scan(float(d["t"]), pts, ids))
            except (ValueError, KeyError, TypeError) as exc:
                raise RecordParseError(str(exc), lineno) from exc
    return out
