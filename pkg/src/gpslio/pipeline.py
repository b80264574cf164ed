"""Time-ordered fusion: datum init, EKF, per-axis gate, map assembly.

Output cadence follows the LIO stream: GPS and IMU records update the
filter silently and each LIO record produces one gated pose.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .ekf import ANG, N_STATES, POS, VEL, Ekf15, make_gps_measurement, make_imu_measurement, process_noise
from .frames import Datum, FrameAnchor, covariance_to_odom, utm_to_odom
from .gate import (AXES, FUSION, LIO, DropoutInterval, GatedPose, GateThresholds, UncertaintyDiag,
                   detect_dropout_intervals, gate)
from .geodesy import GeoFix, UtmCoord, latlon_to_utm
from .records import TYPE_RANK, ImuSample, LioOdometry, SensorRecord
from .rotations import euler_to_matrix, matrix_to_euler

log = logging.getLogger(__name__)

MODES = ("gated", "fusion", "lio")
UNCERTAINTY_SOURCES = ("filter", "gps_message")

# per unit time: position, orientation, body velocity, body rates, body acceleration
DEFAULT_Q = (4.0,) * 3 + (1e-3,) * 3 + (0.5,) * 3 + (0.05,) * 3 + (1.0,) * 3
DEFAULT_P0 = (1e-3,) * 3 + (1e-4,) * 3 + (4.0,) * 3 + (1.0,) * 3 + (1.0,) * 3


class UnsortedInputError(ValueError):
    def __init__(self, index: int, t: float, prev: float):
        self.index = index
        super().__init__(f"record {index} at t={t} precedes previous timestamp {prev}")


@dataclass
class PipelineConfig:
    q_diag: tuple = DEFAULT_Q
    p0_diag: tuple = DEFAULT_P0
    late_tolerance: float = 0.1
    thresholds: GateThresholds = field(default_factory=GateThresholds)
    uncertainty_source: str = "filter"
    reanchor_on_dropout: bool = True
    retro_anchor: bool = False
    mode: str = "gated"
    datum_max_variance: float | None = None
    seed_velocity: bool = True

    def __post_init__(self):
        if len(self.q_diag) != N_STATES or len(self.p0_diag) != N_STATES:
            raise ValueError("q_diag and p0_diag need 15 entries")
        if self.uncertainty_source not in UNCERTAINTY_SOURCES:
            raise ValueError(f"uncertainty_source must be one of {UNCERTAINTY_SOURCES}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.late_tolerance < 0:
            raise ValueError("late_tolerance must be nonnegative")


@dataclass
class SwitchEvent:
    timestamp: float
    axis: str
    to_source: str
    jump: float


@dataclass
class FusedTrajectory:
    poses: list = field(default_factory=list)
    uncertainties: list = field(default_factory=list)
    dropout_intervals: list = field(default_factory=list)
    switches: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    datum: Datum | None = None

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([p.timestamp for p in self.poses])

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.position for p in self.poses]).reshape(-1, 3)

    @property
    def orientations(self) -> np.ndarray:
        return np.array([p.orientation for p in self.poses]).reshape(-1, 4)

    @property
    def variances(self) -> np.ndarray:
        return np.array([u.as_tuple() for u in self.uncertainties]).reshape(-1, 3)


def _ordered(records: Iterable[SensorRecord]):
    """Yield records with equal timestamps reordered IMU -> GPS -> LIO."""
    group: list[SensorRecord] = []
    prev = -math.inf
    for i, rec in enumerate(records):
        t = rec.timestamp
        if t < prev:
            raise UnsortedInputError(i, t, prev)
        if group and t != prev:
            yield from sorted(group, key=lambda r: TYPE_RANK[r.kind])
            group = []
        group.append(rec)
        prev = t
    yield from sorted(group, key=lambda r: TYPE_RANK[r.kind])


class FusionPipeline:
    """Sequential consumer of sensor records; see :func:`run`."""

    def __init__(self, config: PipelineConfig | None = None):
        self.config = config or PipelineConfig()
        self.anchor = FrameAnchor()
        self.filter: Ekf15 | None = None
        self.traj = FusedTrajectory()
        self.counters = {"gps": 0, "imu": 0, "lio": 0, "truth": 0, "gps_invalid": 0,
                         "gps_rejected_before_datum": 0, "imu_before_datum": 0,
                         "pre_datum_poses": 0, "dropped_late": 0, "skipped_singular": 0}
        self._last_imu: ImuSample | None = None
        self._gps_var = np.full(3, np.inf)
        self._prev_sources: tuple | None = None
        self._last_output: np.ndarray | None = None
        self._last_lio: np.ndarray | None = None
        self._last_lio_t: float | None = None
        self._velocity_seeded = not self.config.seed_velocity
        self._offset = np.zeros(3)
        self._series: list[tuple[float, UncertaintyDiag]] = []

    # -- per-record handlers ----------------------------------------------

    def _imu_in_odom(self, s: ImuSample) -> ImuSample:
        R0 = self.anchor.datum.rotation
        rpy = matrix_to_euler(R0.T @ euler_to_matrix(*s.orientation))
        return ImuSample(s.timestamp, rpy, s.angular_velocity, s.linear_acceleration,
                         s.orientation_covariance, s.angular_velocity_covariance,
                         s.linear_acceleration_covariance)

    def on_imu(self, s: ImuSample) -> None:
        self._last_imu = s
        if self.filter is None:
            self.counters["imu_before_datum"] += 1
            return
        self.filter.update(make_imu_measurement(self._imu_in_odom(s)))

    def _init_datum(self, fix: GeoFix) -> None:
        if self._last_imu is None:
            orientation = np.zeros(3)
            msg = f"no IMU sample before first fix at t={fix.timestamp}; datum orientation set to zero"
            log.warning(msg)
            self.traj.warnings.append(msg)
        else:
            orientation = self._last_imu.orientation
        datum = self.anchor.init_datum(latlon_to_utm(fix), orientation)
        cfg = self.config
        x0 = np.zeros(N_STATES)
        if self._last_imu is not None:
            x0[ANG] = self._imu_in_odom(self._last_imu).orientation
        self._datum_t = fix.timestamp
        self.filter = Ekf15(x0, np.diag(cfg.p0_diag), process_noise(cfg.q_diag), fix.timestamp,
                            cfg.late_tolerance)
        log.info("datum set at t=%s: zone %d E=%.3f N=%.3f yaw=%.4f", fix.timestamp, datum.zone,
                 datum.utm0.easting, datum.utm0.northing, datum.yaw0)

    def on_gps(self, fix: GeoFix) -> None:
        if not fix.fix_valid:
            self.counters["gps_invalid"] += 1
            return
        if not self.anchor.initialized:
            limit = self.config.datum_max_variance
            if limit is None:
                limit = min(self.config.thresholds.as_tuple())
            if np.max(np.diag(fix.position_covariance)) > limit:
                self.counters["gps_rejected_before_datum"] += 1
                return
            self._init_datum(fix)
        datum = self.anchor.datum
        utm = latlon_to_utm(fix, forced_zone=datum.zone)
        p = utm_to_odom(self.anchor.utm_to_odom_transform, utm, datum.zone)
        cov = covariance_to_odom(datum, fix.position_covariance)
        self._gps_var = np.diag(cov).copy()
        self.filter.update(make_gps_measurement(p, cov, fix.timestamp))

    def _emit(self, t: float, values, q, sources, u: UncertaintyDiag, pre_datum: bool) -> None:
        pose = GatedPose(t, tuple(float(v) for v in values), q, *sources, pre_datum=pre_datum)
        self.traj.poses.append(pose)
        self.traj.uncertainties.append(u)
        if not pre_datum:
            self._series.append((t, u))

    def on_lio(self, odo: LioOdometry) -> None:
        raw = odo.position
        t = odo.timestamp
        cfg = self.config
        if self.filter is None:
            self.counters["pre_datum_poses"] += 1
            self._emit(t, raw, odo.orientation, (LIO,) * 3, UncertaintyDiag(math.inf, math.inf, math.inf), True)
            self._prev_sources = (LIO,) * 3
            self._last_output = raw.copy()
            self._last_lio = raw.copy()
            self._last_lio_t = t
            return

        if not self._velocity_seeded and self._last_lio_t is not None and t > self._last_lio_t:
            self._seed_velocity(odo)
        self.filter.predict_to(t)
        fused = self.filter.x[POS].copy()
        if cfg.retro_anchor and self.traj.poses and self.traj.poses[0].pre_datum:
            self._retro_anchor(fused - raw)
        if cfg.uncertainty_source == "filter":
            var = self.filter.position_variance
        else:
            var = self._gps_var
        u = UncertaintyDiag(*(float(v) for v in var))

        if cfg.mode == "lio":
            values, sources = raw, (LIO,) * 3
        elif cfg.mode == "fusion":
            values, sources = fused, (FUSION,) * 3
        else:
            cand = raw.copy()
            if cfg.reanchor_on_dropout and self._last_output is not None:
                for i in range(3):
                    if self._prev_sources[i] == LIO:
                        cand[i] = raw[i] + self._offset[i]
                    else:
                        cand[i] = self._last_output[i] + (raw[i] - self._last_lio[i])
            g = gate(fused, cand, u, cfg.thresholds, self._prev_sources, t, odo.orientation)
            values, sources = np.array(g.position), g.sources
            for i in range(3):
                if sources[i] == LIO:
                    self._offset[i] = cand[i] - raw[i]
            self._log_switches(t, values, sources)

        self._emit(t, values, odo.orientation, sources, u, False)
        self._prev_sources = tuple(sources)
        self._last_output = np.array(values, dtype=float)
        self._last_lio = raw.copy()
        self._last_lio_t = t

    def _seed_velocity(self, odo: LioOdometry) -> None:
        # GPS alone makes velocity slow to observe; take the first LIO increment
        # as the initial body velocity (frame independent, no drift yet)
        v_lio = (odo.position - self._last_lio) / (odo.timestamp - self._last_lio_t)
        R = Rotation.from_quat(odo.orientation).as_matrix()
        f = self.filter
        f.x[VEL] = R.T @ v_lio
        # the filter already coasted from the datum with zero velocity
        f.x[POS] += euler_to_matrix(*f.x[ANG]) @ f.x[VEL] * (f.t - self._datum_t)
        self._velocity_seeded = True

    def _log_switches(self, t, values, sources) -> None:
        if self._prev_sources is None:
            return
        for i, axis in enumerate(AXES):
            if sources[i] == self._prev_sources[i]:
                continue
            jump = abs(values[i] - self._last_output[i]) if self._last_output is not None else 0.0
            self.traj.switches.append(SwitchEvent(t, axis, sources[i], float(jump)))
            if sources[i] == FUSION:
                log.info("t=%.3f %s back to fusion, jump %.3f m", t, axis, jump)

    def _retro_anchor(self, shift) -> None:
        # shift pre-datum LIO poses by the LIO -> odom offset at the first anchored pose
        for pose in self.traj.poses:
            if not pose.pre_datum:
                break
            pose.position = tuple(float(v) for v in np.asarray(pose.position) + shift)
            pose.pre_datum = False
        self._last_output = self._last_output + shift

    # -- driver -------------------------------------------------------------

    def consume(self, rec: SensorRecord) -> None:
        kind = rec.kind
        self.counters[kind] += 1
        if kind == "imu":
            self.on_imu(rec.payload)
        elif kind == "gps":
            self.on_gps(rec.payload)
        elif kind == "lio":
            self.on_lio(rec.payload)

    def finish(self) -> FusedTrajectory:
        traj = self.traj
        if self.filter is not None:
            self.counters["dropped_late"] = self.filter.dropped
            self.counters["skipped_singular"] = self.filter.skipped
        else:
            msg = "no valid GPS fix in log; output is LIO-only (pre_datum)"
            log.warning(msg)
            traj.warnings.append(msg)
        traj.counters = dict(self.counters)
        traj.datum = self.anchor.datum
        traj.dropout_intervals = detect_dropout_intervals(self._series, self.config.thresholds)
        return traj


def run(records: Iterable[SensorRecord], config: PipelineConfig | None = None) -> FusedTrajectory:
    p = FusionPipeline(config)
    for rec in _ordered(records):
        p.consume(rec)
    return p.finish()


# -- map assembly -------------------------------------------------------------

def interpolate_poses(traj: FusedTrajectory, times: np.ndarray):
    """Linear position, spherical orientation; times must lie in range."""
    ts = traj.timestamps
    pos = traj.positions
    out_p = np.stack([np.interp(times, ts, pos[:, i]) for i in range(3)], axis=1)
    if len(ts) == 1:
        rots = Rotation.from_quat(np.repeat(traj.orientations, len(times), axis=0))
    else:
        rots = Slerp(ts, Rotation.from_quat(traj.orientations))(times)
    return out_p, rots


def register_scans(traj: FusedTrajectory, scans: Sequence) -> list[tuple[int, np.ndarray]]:
    """Transform each scan into the odom frame; returns (scan index, points)."""
    if not len(traj):
        return []
    ts = traj.timestamps
    keep, times = [], []
    for k, scan in enumerate(scans):
        t = scan.timestamp if hasattr(scan, "timestamp") else scan[0]
        if t < ts[0] - 1e-9 or t > ts[-1] + 1e-9:
            log.warning("scan at t=%s outside trajectory [%s, %s]; skipped", t, ts[0], ts[-1])
            continue
        keep.append(k)
        times.append(min(max(t, ts[0]), ts[-1]))
    if not keep:
        return []
    p, rots = interpolate_poses(traj, np.array(times))
    out = []
    for j, k in enumerate(keep):
        scan = scans[k]
        pts = np.asarray(scan.points if hasattr(scan, "points") else scan[1], dtype=float).reshape(-1, 3)
        out.append((k, rots[j].apply(pts) + p[j]))
    return out


def voxel_downsample(points: np.ndarray, leaf: float) -> np.ndarray:
    """Keep the first point falling in each voxel (deterministic)."""
    if leaf <= 0 or len(points) == 0:
        return points
    keys = np.floor(points / leaf).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(first)]


def assemble_map(traj: FusedTrajectory, scans: Sequence, voxel_leaf: float = 0.0) -> np.ndarray:
    reg = register_scans(traj, scans)
    cloud = np.concatenate([p for _, p in reg], axis=0) if reg else np.zeros((0, 3))
    return voxel_downsample(cloud, voxel_leaf)


def map_dispersion(traj: FusedTrajectory, scans: Sequence) -> float:
    """Sharpness of the assembled map: RMS distance of each registered
    observation from its landmark's centroid, over landmarks seen at least
    twice. A drifting trajectory smears repeated observations apart."""
    reg = register_scans(traj, scans)
    if not reg:
        raise ValueError("no scans registered")
    pts = np.concatenate([p for _, p in reg])
    ids = np.concatenate([np.asarray(scans[k].ids) for k, _ in reg])
    uniq, inv, counts = np.unique(ids, return_inverse=True, return_counts=True)
    centroids = np.zeros((len(uniq), 3))
    np.add.at(centroids, inv, pts)
    centroids /= counts[:, None]
    sq = np.sum((pts - centroids[inv]) ** 2, axis=1)
    multi = counts[inv] > 1
    if not np.any(multi):
        raise ValueError("no landmark observed twice")
    return float(np.sqrt(np.mean(sq[multi])))


# -- file formats ---------------------------------------------------------------

TRAJECTORY_HEADER = "# timestamp x y z qx qy qz qw source_x source_y source_z var_x var_y var_z"


def _fmt(v: float) -> str:
    return repr(float(v))


def format_datum_line(d: Datum) -> str:
    u = d.utm0
    return " ".join(["# datum", _fmt(u.easting), _fmt(u.northing), _fmt(u.altitude), str(u.zone),
                     u.hemisphere, _fmt(d.roll0), _fmt(d.pitch0), _fmt(d.yaw0)])


def parse_datum_line(line: str) -> Datum:
    parts = line.split()
    if len(parts) != 10 or parts[:2] != ["#", "datum"]:
        raise ValueError("malformed datum line")
    e, n, a = (float(v) for v in parts[2:5])
    r, p, y = (float(v) for v in parts[7:10])
    return Datum(UtmCoord(e, n, a, int(parts[5]), parts[6]), r, p, y)


def write_trajectory_csv(path, traj: FusedTrajectory) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRAJECTORY_HEADER + "\n")
        if traj.datum is not None:
            fh.write(format_datum_line(traj.datum) + "\n")
        for pose, u in zip(traj.poses, traj.uncertainties):
            src = [("pre_datum" if pose.pre_datum else s) for s in pose.sources]
            fields = ([_fmt(pose.timestamp)] + [_fmt(v) for v in pose.position]
                      + [_fmt(v) for v in pose.orientation] + src + [_fmt(v) for v in u.as_tuple()])
            fh.write(" ".join(fields) + "\n")


@dataclass
class TrajectoryFile:
    timestamps: np.ndarray
    positions: np.ndarray
    orientations: np.ndarray
    sources: list
    variances: np.ndarray
    datum: Datum | None = None


def read_trajectory_csv(path) -> TrajectoryFile:
    ts, ps, qs, srcs, vs = [], [], [], [], []
    datum = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if line.startswith("# datum"):
                try:
                    datum = parse_datum_line(line)
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from exc
                continue
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                if len(parts) == 8:  # plain TUM
                    vals = [float(v) for v in parts]
                    src, var = ["unknown"] * 3, [math.nan] * 3
                elif len(parts) == 14:
                    vals = [float(v) for v in parts[:8]]
                    src = parts[8:11]
                    var = [float(v) for v in parts[11:14]]
                else:
                    raise ValueError(f"expected 8 or 14 columns, got {len(parts)}")
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            ts.append(vals[0])
            ps.append(vals[1:4])
            qs.append(vals[4:8])
            srcs.append(tuple(src))
            vs.append(var)
    return TrajectoryFile(np.array(ts), np.array(ps).reshape(-1, 3), np.array(qs).reshape(-1, 4),
                          srcs, np.array(vs).reshape(-1, 3), datum)


def write_point_cloud(path, points: np.ndarray) -> None:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(points)}\n")
        for p in points:
            fh.write(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}\n")


def read_point_cloud(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        n = int(fh.readline())
        pts = np.array([[float(v) for v in line.split()] for line in fh if line.strip()])
    pts = pts.reshape(-1, 3)
    if len(pts) != n:
        raise ValueError(f"{path}: header says {n} points, found {len(pts)}")
    return pts
