"""Trajectory metrics: RMSE against a reference, end-to-end error, and
multi-run dispersion.

No alignment is applied by default; estimate and reference are assumed to
share the session datum frame. :func:`umeyama_alignment` is available for
cross-method comparisons.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .frames import Datum, build_utm_to_odom
from .rotations import euler_to_matrix

log = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 0.02


class MetricError(ValueError):
    pass


@dataclass
class TrajectoryPair:
    estimate_t: np.ndarray
    estimate_p: np.ndarray
    reference_t: np.ndarray
    reference_p: np.ndarray
    tolerance: float = DEFAULT_TOLERANCE

    def __post_init__(self):
        self.estimate_t = np.asarray(self.estimate_t, dtype=float).reshape(-1)
        self.reference_t = np.asarray(self.reference_t, dtype=float).reshape(-1)
        self.estimate_p = np.asarray(self.estimate_p, dtype=float).reshape(-1, 3)
        self.reference_p = np.asarray(self.reference_p, dtype=float).reshape(-1, 3)
        for t in (self.estimate_t, self.reference_t):
            if t.size > 1 and np.any(np.diff(t) < 0):
                raise MetricError("trajectory timestamps must be sorted")


@dataclass
class Matches:
    estimate: np.ndarray
    reference: np.ndarray
    timestamps: np.ndarray
    unmatched: int

    def __len__(self) -> int:
        return len(self.estimate)


def associate(pair: TrajectoryPair) -> Matches:
    """Match each estimate sample to the nearest-in-time reference sample."""
    if pair.tolerance <= 0:
        raise MetricError("association tolerance must be positive")
    et, rt = pair.estimate_t, pair.reference_t
    if et.size == 0 or rt.size == 0:
        raise MetricError("cannot associate an empty trajectory")
    j = np.searchsorted(rt, et)
    lo = np.clip(j - 1, 0, rt.size - 1)
    hi = np.clip(j, 0, rt.size - 1)
    pick = np.where(np.abs(rt[hi] - et) < np.abs(rt[lo] - et), hi, lo)
    ok = np.abs(rt[pick] - et) <= pair.tolerance
    n = int(ok.sum())
    if n == 0:
        raise MetricError("no samples associated within tolerance")
    return Matches(pair.estimate_p[ok], pair.reference_p[pick[ok]], et[ok], int(et.size - n))


def rmse(matches: Matches, planar: bool = False) -> float:
    if len(matches) == 0:
        raise MetricError("rmse needs at least one match")
    d = matches.estimate - matches.reference
    if planar:
        d = d[:, :2]
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def axis_rmse(matches: Matches) -> np.ndarray:
    d = matches.estimate - matches.reference
    return np.sqrt(np.mean(d * d, axis=0))


def end_to_end_error(positions, expected_closure) -> float:
    p = np.asarray(positions, dtype=float).reshape(-1, 3)
    if len(p) == 0:
        raise MetricError("empty trajectory")
    return float(np.linalg.norm(p[-1] - np.asarray(expected_closure, dtype=float)))


def multi_run_dispersion(timestamps, positions, loop_period: float) -> float:
    """Largest spread across runs of the positions at a common loop phase.

    Runs are consecutive loop_period-long windows starting at the first
    sample; each run is linearly interpolated at the phases sampled in the
    first run. The spread at a phase is the max pairwise distance.
    """
    t = np.asarray(timestamps, dtype=float).reshape(-1)
    p = np.asarray(positions, dtype=float).reshape(-1, 3)
    if loop_period <= 0:
        raise MetricError("loop period must be positive")
    if t.size == 0:
        raise MetricError("empty trajectory")
    span = t[-1] - t[0]
    n_runs = int(np.floor(span / loop_period + 1e-9))
    if n_runs < 2:
        raise MetricError(f"trajectory covers {span / loop_period:.2f} loop periods, need >= 2")
    # complete runs plus the closing sample of the last one
    phases = t[(t - t[0]) < loop_period - 1e-9] - t[0]
    runs = []
    for k in range(n_runs):
        tk = t[0] + k * loop_period + phases
        runs.append(np.stack([np.interp(tk, t, p[:, i]) for i in range(3)], axis=1))
    runs = np.stack(runs)  # (n_runs, n_phases, 3)
    spread = np.zeros(len(phases))
    for a in range(n_runs):
        for b in range(a + 1, n_runs):
            spread = np.maximum(spread, np.linalg.norm(runs[a] - runs[b], axis=1))
    return float(spread.max())


def umeyama_alignment(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rotation R and translation t with dst ~ R src + t."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s, mu_d = src.mean(0), dst.mean(0)
    C = (dst - mu_d).T @ (src - mu_s) / len(src)
    U, _, Vt = np.linalg.svd(C)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1
    R = U @ S @ Vt
    return R, mu_d - R @ mu_s


def truth_in_session_frame(truth_positions, true_origin_utm, true_initial_rpy, datum: Datum) -> np.ndarray:
    """Express simulator truth (true-start frame) in a session's datum frame.

    The session frame is anchored at the first reported fix, which carries
    that fix's noise; comparing in this frame measures global accuracy.
    """
    p = np.asarray(truth_positions, dtype=float).reshape(-1, 3)
    R_true = euler_to_matrix(*true_initial_rpy)
    utm = np.asarray(true_origin_utm, dtype=float) + p @ R_true.T
    t_inv = build_utm_to_odom(datum)
    return t_inv.apply(utm)


@dataclass
class Metrics:
    rmse: float
    rmse_axes: tuple
    end_to_end: float
    matches: int
    unmatched: int
    dispersion: float | None = None

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "rmse_x": self.rmse_axes[0], "rmse_y": self.rmse_axes[1],
                "rmse_z": self.rmse_axes[2], "end_to_end": self.end_to_end,
                "multi_run_dispersion": self.dispersion, "matches": self.matches,
                "unmatched": self.unmatched}


def evaluate(pair: TrajectoryPair, loop_period: float | None = None, planar: bool = False,
             align: bool = False, expected_closure=None) -> Metrics:
    m = associate(pair)
    if align:
        R, t = umeyama_alignment(m.estimate, m.reference)
        m = Matches(m.estimate @ R.T + t, m.reference, m.timestamps, m.unmatched)
    closure = pair.reference_p[0] if expected_closure is None else expected_closure
    disp = None
    if loop_period:
        try:
            disp = multi_run_dispersion(pair.estimate_t, pair.estimate_p, loop_period)
        except MetricError as exc:
            log.info("dispersion not computed: %s", exc)
    return Metrics(rmse(m, planar), tuple(float(v) for v in axis_rmse(m)),
                   end_to_end_error(pair.estimate_p, closure), len(m), m.unmatched, disp)
