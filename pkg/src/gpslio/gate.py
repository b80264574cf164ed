"""Per-axis uncertainty gate between the fused state and the LIO state.

For each axis a: if the position variance on a exceeds its threshold the
LIO value is used, otherwise the fused value. The comparison is strict.
No blending is ever done; every output component is one of the inputs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

AXES = ("x", "y", "z")
FUSION = "fusion"
LIO = "lio"


@dataclass(frozen=True)
class GateThresholds:
    threshold_x: float = 1.0
    threshold_y: float = 1.0
    threshold_z: float = 1.0
    hysteresis_fraction: float = 0.0

    def __post_init__(self):
        for v in self.as_tuple():
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"gate thresholds must be positive and finite, got {v}")
        if not (math.isfinite(self.hysteresis_fraction) and 0 <= self.hysteresis_fraction < 1):
            raise ValueError("hysteresis_fraction must be in [0, 1)")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.threshold_x, self.threshold_y, self.threshold_z)


@dataclass(frozen=True)
class UncertaintyDiag:
    var_x: float
    var_y: float
    var_z: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.var_x, self.var_y, self.var_z)


@dataclass
class GatedPose:
    timestamp: float
    position: tuple[float, float, float]
    orientation: np.ndarray  # quaternion x, y, z, w (from LIO)
    source_x: str
    source_y: str
    source_z: str
    pre_datum: bool = False

    @property
    def sources(self) -> tuple[str, str, str]:
        return (self.source_x, self.source_y, self.source_z)


@dataclass(frozen=True)
class DropoutInterval:
    start: float
    end: float
    axes: frozenset = field(default_factory=frozenset)


def _exceeds(u: float, th: float) -> bool:
    # NaN or inf variance fails safe to LIO
    return not math.isfinite(u) or u > th


def gate(fusion_state: Sequence[float], lio_state: Sequence[float], u: UncertaintyDiag,
         th: GateThresholds, prev_sources: Sequence[str] | None = None,
         timestamp: float = 0.0, orientation=None) -> GatedPose:
    values = []
    sources = []
    h = th.hysteresis_fraction
    for i, (fv, lv, var, limit) in enumerate(zip(fusion_state, lio_state, u.as_tuple(), th.as_tuple())):
        if not math.isfinite(var):
            log.warning("non-finite %s uncertainty at t=%s; using LIO", AXES[i], timestamp)
        use_lio = _exceeds(var, limit)
        if not use_lio and h > 0 and prev_sources is not None and prev_sources[i] == LIO:
            use_lio = var > limit * (1.0 - h)
        if use_lio:
            values.append(lv)
            sources.append(LIO)
        else:
            values.append(fv)
            sources.append(FUSION)
    q = np.array([0.0, 0.0, 0.0, 1.0]) if orientation is None else np.asarray(orientation, dtype=float)
    return GatedPose(timestamp, tuple(values), q, *sources)


def detect_dropout_intervals(uncertainty_series: Sequence[tuple[float, UncertaintyDiag]],
                             th: GateThresholds) -> list[DropoutInterval]:
    """Maximal runs of consecutive samples where any axis exceeds its threshold.

    Interval bounds are the first and last exceeding sample times.
    """
    intervals: list[DropoutInterval] = []
    start = end = None
    axes: set[str] = set()
    for t, u in uncertainty_series:
        over = {AXES[i] for i, (v, limit) in enumerate(zip(u.as_tuple(), th.as_tuple()))
                if _exceeds(v, limit)}
        if over:
            if start is None:
                start, axes = t, set()
            end = t
            axes |= over
        elif start is not None:
            intervals.append(DropoutInterval(start, end, frozenset(axes)))
            start = None
    if start is not None:
        intervals.append(DropoutInterval(start, end, frozenset(axes)))
    return intervals


def intervals_to_series(intervals: Sequence[DropoutInterval], timestamps: Sequence[float],
                        th: GateThresholds) -> list[tuple[float, UncertaintyDiag]]:
    """Rebuild a thresholded uncertainty series from detected intervals.

    Axes inside an interval get twice their threshold, everything else zero.
    """
    out = []
    k = 0
    ivs = sorted(intervals, key=lambda iv: iv.start)
    for t in timestamps:
        while k < len(ivs) and ivs[k].end < t:
            k += 1
        vals = [0.0, 0.0, 0.0]
        if k < len(ivs) and ivs[k].start <= t <= ivs[k].end:
            for i, a in enumerate(AXES):
                if a in ivs[k].axes:
                    vals[i] = 2.0 * th.as_tuple()[i]
        out.append((t, UncertaintyDiag(*vals)))
    return out
