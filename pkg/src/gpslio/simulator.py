"""Deterministic ground truth and sensor streams.

Everything is a pure function of the :class:`Scenario`. Each sensor draws
from its own substream seeded by ``(seed, sensor_id)`` so adding or
resizing one stream never changes another's draws.

Frames: the path is generated in a local ENU frame and expressed in the odom
frame, i.e. the vehicle frame at t = 0. GPS fixes are produced by mapping
truth odom -> UTM -> lat/lon; IMU orientation is reported in ENU; LIO pose is
reported in its own frame, which starts coincident with odom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .geodesy import GeoFix, UtmCoord, latlon_to_utm, utm_to_latlon
from .records import ImuSample, LioOdometry, SensorRecord, TruthSample, merge_streams
from .rotations import euler_rate_matrix, euler_to_matrix, euler_to_quat, matrix_to_euler, rot_z, wrap_angle

GRAVITY = 9.80665
SENSOR_IDS = {"gps": 1, "imu": 2, "lio": 3, "scan": 4}
TRAJECTORY_KINDS = ("loop", "figure_eight", "multi_run_loop", "straight_out_and_back", "stationary")


@dataclass
class Scenario:
    seed: int = 20230101
    duration: float = 400.0
    sample_rates: dict = field(default_factory=lambda: {"gps": 5.0, "imu": 50.0, "lio": 25.0})
    trajectory_kind: str = "multi_run_loop"
    loop_length: float = 500.0       # loop circumference / out-and-back one-way length, m
    speed: float = 5.0               # m/s
    hill_height: float = 2.0         # peak z excursion on loops, m
    heading: float = 0.3             # initial yaw in ENU, rad
    origin_latitude: float = 43.9450
    origin_longitude: float = -78.8960
    origin_altitude: float = 100.0
    gps_noise_sigma: float = 0.03
    gps_covariance_floor: float = 1e-6
    dropout_windows: list = field(default_factory=lambda: [(60.0, 70.0), (170.0, 180.0), (300.0, 310.0)])
    dropout_covariance: float = 1e4
    lio_drift_rate: float = 0.01
    lio_drift_direction: tuple = (0.8, 0.5, 0.33)
    lio_bias_walk_sigma: float = 0.01
    lio_yaw_drift_rate: float = 2e-5   # rad per metre travelled
    imu_orientation_sigma: float = 1e-4
    imu_gyro_sigma: float = 1e-3
    imu_accel_sigma: float = 0.02
    scan_rate: float = 1.0
    scan_range: float = 25.0

    def __post_init__(self):
        self.sample_rates = {k: float(v) for k, v in self.sample_rates.items()}
        self.dropout_windows = [(float(a), float(b)) for a, b in self.dropout_windows]
        self.lio_drift_direction = tuple(float(v) for v in self.lio_drift_direction)
        self.validate()

    def validate(self) -> None:
        if self.trajectory_kind not in TRAJECTORY_KINDS:
            raise ValueError(f"unknown trajectory kind {self.trajectory_kind!r}")
        if self.duration < 0:
            raise ValueError("duration must be nonnegative")
        for name in ("gps", "imu", "lio"):
            if self.sample_rates.get(name, 0) <= 0:
                raise ValueError(f"sample rate for {name} must be positive")
        top = self.truth_rate
        for name, r in self.sample_rates.items():
            ratio = top / r
            if abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"{name} rate {r} does not divide the truth rate {top}")
        for a, b in self.dropout_windows:
            if not 0 <= a <= b <= self.duration:
                raise ValueError(f"dropout window ({a}, {b}) outside [0, {self.duration}]")
        if self.speed <= 0 or self.loop_length <= 0:
            raise ValueError("speed and loop_length must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if np.linalg.norm(self.lio_drift_direction) == 0:
            raise ValueError("lio_drift_direction must be nonzero")

    @property
    def truth_rate(self) -> float:
        return max(self.sample_rates.values())

    @property
    def loop_period(self) -> float | None:
        if self.trajectory_kind in ("loop", "multi_run_loop", "figure_eight"):
            return self.loop_length / self.speed
        return None

    @property
    def geographic_origin(self) -> GeoFix:
        return GeoFix(0.0, self.origin_latitude, self.origin_longitude, self.origin_altitude)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dropout_windows"] = [list(w) for w in self.dropout_windows]
        d["lio_drift_direction"] = list(self.lio_drift_direction)
        return d


def sensor_rng(seed: int, sensor: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(SENSOR_IDS[sensor],)))


def sample_times(rate: float, duration: float) -> np.ndarray:
    if duration <= 0:
        return np.zeros(0)
    n = int(math.floor(duration * rate + 1e-9)) + 1
    return np.arange(n) / rate


# -- ground truth -----------------------------------------------------------

def _path_derivatives(s: Scenario, t: np.ndarray):
    """Position and its first three derivatives in the path frame."""
    t = np.asarray(t, dtype=float)
    z = np.zeros_like(t)
    kind = s.trajectory_kind
    if kind in ("loop", "multi_run_loop"):
        r = s.loop_length / (2 * np.pi)
        w = s.speed / r
        h = s.hill_height / 2
        c, sn = np.cos(w * t), np.sin(w * t)
        c2, s2 = np.cos(2 * w * t), np.sin(2 * w * t)
        p = np.stack([r * sn, r * (1 - c), h * (1 - c2)], axis=1)
        v = np.stack([r * w * c, r * w * sn, 2 * w * h * s2], axis=1)
        a = np.stack([-r * w**2 * sn, r * w**2 * c, 4 * w**2 * h * c2], axis=1)
        j = np.stack([-r * w**3 * c, -r * w**3 * sn, -8 * w**3 * h * s2], axis=1)
    elif kind == "figure_eight":
        # lemniscate of Gerono; arc length ~ 1.22 * 4A for this aspect
        A = s.loop_length / 6.1
        w = 2 * np.pi / s.loop_period
        h = s.hill_height / 2
        sn, c = np.sin(w * t), np.cos(w * t)
        s2, c2 = np.sin(2 * w * t), np.cos(2 * w * t)
        p = np.stack([A * sn, 0.5 * A * s2, h * (1 - c)], axis=1)
        v = np.stack([A * w * c, A * w * c2, h * w * sn], axis=1)
        a = np.stack([-A * w**2 * sn, -2 * A * w**2 * s2, h * w**2 * c], axis=1)
        j = np.stack([-A * w**3 * c, -4 * A * w**3 * c2, -h * w**3 * sn], axis=1)
    elif kind == "straight_out_and_back":
        T = max(s.duration, 1e-9)
        w = 2 * np.pi / T
        D = s.loop_length
        p = np.stack([0.5 * D * (1 - np.cos(w * t)), z, z], axis=1)
        v = np.stack([0.5 * D * w * np.sin(w * t), z, z], axis=1)
        a = np.stack([0.5 * D * w**2 * np.cos(w * t), z, z], axis=1)
        j = np.stack([-0.5 * D * w**3 * np.sin(w * t), z, z], axis=1)
    else:  # stationary
        p = v = a = j = np.zeros((t.size, 3))
    return p, v, a, j


def _path_attitude(s: Scenario, v: np.ndarray, a: np.ndarray):
    """(roll, pitch, yaw) following the velocity direction, and their rates."""
    n = v.shape[0]
    rpy = np.zeros((n, 3))
    rates = np.zeros((n, 3))
    if s.trajectory_kind in ("straight_out_and_back", "stationary"):
        return rpy, rates
    vx, vy, vz = v.T
    ax, ay, az = a.T
    hxy2 = vx**2 + vy**2
    hxy = np.sqrt(hxy2)
    rpy[:, 2] = np.arctan2(vy, vx)
    rpy[:, 1] = -np.arctan2(vz, hxy)
    rates[:, 2] = (vx * ay - vy * ax) / hxy2
    dh = (vx * ax + vy * ay) / hxy
    rates[:, 1] = -(hxy * az - vz * dh) / (hxy2 + vz**2)
    return rpy, rates


@dataclass
class TruthTrack:
    """Array form of the ground truth; odom frame unless noted."""

    timestamp: np.ndarray
    position: np.ndarray
    orientation: np.ndarray       # roll, pitch, yaw (odom frame)
    velocity: np.ndarray
    acceleration: np.ndarray
    angular_velocity: np.ndarray  # body frame
    initial_orientation: np.ndarray = field(default_factory=lambda: np.zeros(3))  # ENU

    def __len__(self) -> int:
        return self.timestamp.size

    def __getitem__(self, k: int) -> TruthSample:
        return TruthSample(float(self.timestamp[k]), self.position[k], self.orientation[k],
                           self.velocity[k], self.acceleration[k])

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    def rotation(self, k: int) -> np.ndarray:
        return euler_to_matrix(*self.orientation[k])

    def indices_for(self, times: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.timestamp, times - 1e-9)
        idx = np.clip(idx, 0, max(len(self) - 1, 0))
        if times.size and np.any(np.abs(self.timestamp[idx] - times) > 1e-9):
            raise ValueError("sensor timestamps are not on the truth grid")
        return idx


def generate_ground_truth(s: Scenario) -> TruthTrack:
    t = sample_times(s.truth_rate, s.duration)
    p, v, a, _ = _path_derivatives(s, t)
    rpy_path, eul_rates = _path_attitude(s, v, a)

    p0, v0, a0, _ = _path_derivatives(s, np.zeros(1))
    rpy0, _ = _path_attitude(s, v0, a0)
    Rp0 = euler_to_matrix(*rpy0[0])

    pos = (p - p0[0]) @ Rp0        # Rp0^T (p - p0), row-wise
    vel = v @ Rp0
    acc = a @ Rp0
    rpy = np.zeros_like(rpy_path)
    omega = np.zeros_like(rpy_path)
    for k in range(t.size):
        rpy[k] = matrix_to_euler(Rp0.T @ euler_to_matrix(*rpy_path[k]))
        E = euler_rate_matrix(rpy_path[k, 0], rpy_path[k, 1])
        omega[k] = np.linalg.solve(E, eul_rates[k])

    R0_enu = rot_z(s.heading) @ Rp0
    return TruthTrack(t, pos, rpy, vel, acc, omega, matrix_to_euler(R0_enu))


def odom_to_enu_rotation(truth: TruthTrack) -> np.ndarray:
    return euler_to_matrix(*truth.initial_orientation)


# -- sensors ----------------------------------------------------------------

def in_dropout(t: float, windows) -> bool:
    return any(a <= t <= b for a, b in windows)


def simulate_gps(truth: TruthTrack, s: Scenario) -> list[GeoFix]:
    rng = sensor_rng(s.seed, "gps")
    times = sample_times(s.sample_rates["gps"], s.duration)
    idx = truth.indices_for(times)
    origin = latlon_to_utm(s.geographic_origin)
    R0 = odom_to_enu_rotation(truth)
    fixes = []
    for t, k in zip(times, idx):
        enu = R0 @ truth.position[k]
        if in_dropout(t, s.dropout_windows):
            var = s.dropout_covariance
        else:
            var = s.gps_noise_sigma**2
        noise = rng.standard_normal(3) * math.sqrt(var)
        utm = UtmCoord(origin.easting + enu[0] + noise[0], origin.northing + enu[1] + noise[1],
                       origin.altitude + enu[2] + noise[2], origin.zone, origin.hemisphere)
        g = utm_to_latlon(utm, float(t))
        g.position_covariance = np.eye(3) * max(var, s.gps_covariance_floor)
        fixes.append(g)
    return fixes


def simulate_imu(truth: TruthTrack, s: Scenario) -> list[ImuSample]:
    rng = sensor_rng(s.seed, "imu")
    times = sample_times(s.sample_rates["imu"], s.duration)
    idx = truth.indices_for(times)
    R0 = odom_to_enu_rotation(truth)
    so, sg, sa = s.imu_orientation_sigma, s.imu_gyro_sigma, s.imu_accel_sigma
    cov_o = np.eye(3) * max(so**2, 1e-10)
    cov_g = np.eye(3) * max(sg**2, 1e-10)
    cov_a = np.eye(3) * max(sa**2, 1e-8)
    out = []
    for t, k in zip(times, idx):
        R = truth.rotation(k)
        n = rng.standard_normal(9)
        rpy_enu = matrix_to_euler(R0 @ R)
        out.append(ImuSample(
            float(t),
            wrap_angle(rpy_enu + so * n[0:3]),
            truth.angular_velocity[k] + sg * n[3:6],
            R.T @ truth.acceleration[k] + sa * n[6:9],
            cov_o, cov_g, cov_a,
        ))
    return out


def simulate_lio(truth: TruthTrack, s: Scenario) -> list[LioOdometry]:
    """Drifting LIO: each increment gains ``drift_rate * |step|`` along a fixed
    drift direction (so error grows with distance travelled, on every axis)
    plus a bias random walk."""
    rng = sensor_rng(s.seed, "lio")
    times = sample_times(s.sample_rates["lio"], s.duration)
    idx = truth.indices_for(times)
    d_hat = np.asarray(s.lio_drift_direction, dtype=float)
    d_hat = d_hat / np.linalg.norm(d_hat)
    cov = np.diag([1e-4] * 3 + [1e-5] * 3)
    out = []
    pos = np.zeros(3)
    yaw_err = 0.0
    prev_t = prev_p = None
    for t, k in zip(times, idx):
        p_true = truth.position[k]
        if prev_p is None:
            pos = p_true.copy()
        else:
            step = p_true - prev_p
            dist = float(np.linalg.norm(step))
            pos = pos + step + s.lio_drift_rate * dist * d_hat
            if s.lio_bias_walk_sigma > 0:
                pos = pos + s.lio_bias_walk_sigma * math.sqrt(t - prev_t) * rng.standard_normal(3)
            yaw_err += s.lio_yaw_drift_rate * dist
        R = rot_z(yaw_err) @ truth.rotation(k)
        out.append(LioOdometry(float(t), pos.copy(), euler_to_quat(matrix_to_euler(R)), cov))
        prev_t, prev_p = t, p_true
    return out


@dataclass
class Scan:
    timestamp: float
    points: np.ndarray   # (n, 3) body frame
    ids: np.ndarray      # landmark index per point


def make_landmarks(truth: TruthTrack, s: Scenario, spacing: float = 2.0, offset: float = 6.0) -> np.ndarray:
    """Corridor walls: points either side of the first pass of the path."""
    if len(truth) < 2:
        return np.zeros((0, 3))
    pos = truth.position
    seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    period = s.loop_period
    limit = arc[-1] if period is None else min(arc[-1], s.loop_length)
    pts = []
    for d in np.arange(0.0, limit, spacing):
        k = int(np.searchsorted(arc, d))
        k = min(k, len(truth) - 1)
        R = truth.rotation(k)
        for side in (-1.0, 1.0):
            for height in (0.5, 2.0):
                pts.append(pos[k] + R @ np.array([0.0, side * offset, height]))
    return np.asarray(pts)


def simulate_scans(truth: TruthTrack, s: Scenario, landmarks: np.ndarray | None = None,
                   point_sigma: float = 0.0) -> list[Scan]:
    if landmarks is None:
        landmarks = make_landmarks(truth, s)
    rng = sensor_rng(s.seed, "scan")
    times = sample_times(s.scan_rate, s.duration)
    if times.size:
        times = times[times <= truth.timestamp[-1] + 1e-9]
    out = []
    for t in times:
        k = int(truth.indices_for(np.array([t]))[0])
        d = landmarks - truth.position[k]
        ids = np.flatnonzero(np.linalg.norm(d, axis=1) <= s.scan_range)
        body = d[ids] @ truth.rotation(k)
        if point_sigma > 0:
            body = body + point_sigma * rng.standard_normal(body.shape)
        out.append(Scan(float(t), body, ids))
    return out


@dataclass
class SimulationResult:
    scenario: Scenario
    truth: TruthTrack
    gps: list
    imu: list
    lio: list

    def records(self, include_truth: bool = True) -> list[SensorRecord]:
        streams = [
            [SensorRecord(m.timestamp, m) for m in self.imu],
            [SensorRecord(g.timestamp, g) for g in self.gps],
            [SensorRecord(l.timestamp, l) for l in self.lio],
        ]
        if include_truth:
            streams.append([SensorRecord(ts.timestamp, ts) for ts in self.truth])
        return merge_streams(*streams)

    def meta(self) -> dict:
        """Everything evaluation needs to put truth in a session frame."""
        origin = latlon_to_utm(self.scenario.geographic_origin)
        return {
            "scenario": self.scenario.to_dict(),
            "dropout_windows": [list(w) for w in self.scenario.dropout_windows],
            "loop_period": self.scenario.loop_period,
            "gps_period": 1.0 / self.scenario.sample_rates["gps"],
            "lio_period": 1.0 / self.scenario.sample_rates["lio"],
            "true_origin_utm": [origin.easting, origin.northing, origin.altitude],
            "utm_zone": origin.zone,
            "hemisphere": origin.hemisphere,
            "true_initial_rpy": [float(v) for v in self.truth.initial_orientation],
        }


def simulate(s: Scenario) -> SimulationResult:
    truth = generate_ground_truth(s)
    return SimulationResult(s, truth, simulate_gps(truth, s), simulate_imu(truth, s), simulate_lio(truth, s))
