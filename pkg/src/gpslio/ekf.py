"""15-state extended Kalman filter.

State layout (odom frame position/orientation, body frame rates)::

    0-2   X, Y, Z              m
    3-5   roll, pitch, yaw     rad
    6-8   X', Y', Z'           m/s (body)
    9-11  roll', pitch', yaw'  rad/s (body angular velocity)
    12-14 X'', Y'', Z''        m/s^2 (body)

Prediction is constant-acceleration kinematics with Euler-angle orientation
integration. Velocity lives in the body frame, so its update carries the
transport term: v <- v + (a - w x v) dt. Correction is a masked-measurement
update with the Joseph-form covariance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .records import ImuSample
from .rotations import euler_rate_matrix, euler_to_matrix, wrap_angle

log = logging.getLogger(__name__)

N_STATES = 15
POS = slice(0, 3)
ANG = slice(3, 6)
VEL = slice(6, 9)
RATE = slice(9, 12)
ACC = slice(12, 15)
ANGLE_INDICES = (3, 4, 5)

STATE_NAMES = ("x", "y", "z", "roll", "pitch", "yaw", "vx", "vy", "vz",
               "vroll", "vpitch", "vyaw", "ax", "ay", "az")

GPS_MASK = np.zeros(N_STATES, dtype=bool)
GPS_MASK[POS] = True
IMU_MASK = np.zeros(N_STATES, dtype=bool)
IMU_MASK[ANG] = IMU_MASK[RATE] = IMU_MASK[ACC] = True

GIMBAL_EPS = 1e-6
MAX_INNOVATION_COND = 1e12
Q_FLOOR = 1e-9


class GimbalLockError(ValueError):
    pass


class SingularInnovationError(np.linalg.LinAlgError):
    pass


@dataclass
class Measurement:
    timestamp: float
    mask: np.ndarray
    z: np.ndarray
    R: np.ndarray
    source: str

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool).reshape(N_STATES)
        self.z = np.asarray(self.z, dtype=float).reshape(-1)
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        m = int(self.mask.sum())
        if self.z.size != m or self.R.shape != (m, m):
            raise ValueError(f"measurement dims inconsistent: mask {m}, z {self.z.size}, R {self.R.shape}")
        if not (np.all(np.isfinite(self.z)) and np.all(np.isfinite(self.R))):
            raise ValueError("measurement has non-finite entries")
        if np.any(np.diag(self.R) <= 0):
            raise ValueError("measurement covariance must have a positive diagonal")
        if self.source not in ("gps", "imu", "lio"):
            raise ValueError(f"unknown measurement source {self.source!r}")

    @property
    def H(self) -> np.ndarray:
        return np.eye(N_STATES)[self.mask]


def process_noise(diag, floor: float = Q_FLOOR) -> np.ndarray:
    """Diagonal per-unit-time process noise with a per-state floor."""
    d = np.asarray(diag, dtype=float).reshape(N_STATES)
    if np.any(~np.isfinite(d)) or np.any(d < 0):
        raise ValueError("process noise diagonal must be finite and nonnegative")
    return np.diag(np.maximum(d, floor))


def _check_pitch(pitch: float) -> None:
    if abs(abs(wrap_angle(pitch)) - np.pi / 2) < GIMBAL_EPS:
        raise GimbalLockError(f"pitch {pitch} is at the Euler-angle singularity")


def _rotation_and_partials(roll: float, pitch: float, yaw: float):
    """R = Rz Ry Rx and its partials with respect to roll, pitch, yaw."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    R = np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])
    dR_droll = np.array([
        [0.0, cy * sp * cr + sy * sr, -cy * sp * sr + sy * cr],
        [0.0, sy * sp * cr - cy * sr, -sy * sp * sr - cy * cr],
        [0.0, cp * cr, -cp * sr],
    ])
    dR_dpitch = np.array([
        [-cy * sp, cy * cp * sr, cy * cp * cr],
        [-sy * sp, sy * cp * sr, sy * cp * cr],
        [-cp, -sp * sr, -sp * cr],
    ])
    dR_dyaw = np.array([
        [-sy * cp, -sy * sp * sr - cy * cr, -sy * sp * cr + cy * sr],
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [0.0, 0.0, 0.0],
    ])
    return R, dR_droll, dR_dpitch, dR_dyaw


def motion_model(x, dt: float) -> np.ndarray:
    if dt < 0:
        raise ValueError(f"negative time step {dt}")
    x = np.asarray(x, dtype=float)
    roll, pitch, yaw = x[ANG]
    _check_pitch(pitch)
    out = x.copy()
    R = euler_to_matrix(roll, pitch, yaw)
    out[POS] = x[POS] + R @ (x[VEL] * dt + 0.5 * x[ACC] * dt * dt)
    out[ANG] = wrap_angle(x[ANG] + euler_rate_matrix(roll, pitch) @ x[RATE] * dt)
    out[VEL] = x[VEL] + (x[ACC] - _skew(x[RATE]) @ x[VEL]) * dt
    return out


def motion_jacobian(x, dt: float) -> np.ndarray:
    if dt < 0:
        raise ValueError(f"negative time step {dt}")
    x = np.asarray(x, dtype=float)
    roll, pitch, yaw = (float(a) for a in x[ANG])
    _check_pitch(pitch)

    F = np.eye(N_STATES)
    if dt == 0:
        return F

    R, dRr, dRp, dRy = _rotation_and_partials(roll, pitch, yaw)
    u = x[VEL] * dt + 0.5 * x[ACC] * dt * dt
    F[POS, 3] = dRr @ u
    F[POS, 4] = dRp @ u
    F[POS, 5] = dRy @ u
    F[POS, VEL] = R * dt
    F[POS, ACC] = R * (0.5 * dt * dt)

    wx, wy, wz = (float(v) for v in x[RATE])
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    tp = sp / cp
    c2 = cp * cp
    # d(E w)/d(roll) and d(E w)/d(pitch), E = euler_rate_matrix
    F[3, 3] += (cr * tp * wy - sr * tp * wz) * dt
    F[4, 3] += (-sr * wy - cr * wz) * dt
    F[5, 3] += (cr / cp * wy - sr / cp * wz) * dt
    F[3, 4] += (sr / c2 * wy + cr / c2 * wz) * dt
    F[5, 4] += (sr * sp / c2 * wy + cr * sp / c2 * wz) * dt
    F[ANG, RATE] = euler_rate_matrix(roll, pitch) * dt

    vx, vy, vz = (float(v) for v in x[VEL])
    F[6, 7] += wz * dt
    F[6, 8] -= wy * dt
    F[7, 6] -= wz * dt
    F[7, 8] += wx * dt
    F[8, 6] += wy * dt
    F[8, 7] -= wx * dt
    F[VEL, RATE] = _skew((vx, vy, vz)) * dt
    F[6, 12] = F[7, 13] = F[8, 14] = dt
    return F


def _skew(v) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def predict(x, P, Q, dt: float):
    """Returns (f(x), F P F^T + Q dt)."""
    x_pred = motion_model(x, dt)
    F = motion_jacobian(x, dt)
    P_pred = symmetrize(F @ P @ F.T + np.asarray(Q) * dt)
    return x_pred, P_pred


def correct(x, P, m: Measurement, strict: bool = False):
    """Masked EKF update with Joseph-form covariance.

    A numerically singular innovation covariance skips the update (returns
    the inputs) unless ``strict`` is set, in which case
    :class:`SingularInnovationError` is raised.
    """
    x = np.asarray(x, dtype=float)
    P = np.asarray(P, dtype=float)
    idx = np.flatnonzero(m.mask)

    y = m.z - x[idx]
    ang = (idx >= ANGLE_INDICES[0]) & (idx <= ANGLE_INDICES[-1])
    if ang.any():
        y[ang] = wrap_angle(y[ang])

    S = P[np.ix_(idx, idx)] + m.R
    eig = np.linalg.eigvalsh(S)
    if eig[0] <= 0 or eig[-1] > MAX_INNOVATION_COND * eig[0]:
        msg = f"innovation covariance singular at t={m.timestamp} ({m.source}); update skipped"
        if strict:
            raise SingularInnovationError(msg)
        log.warning(msg)
        return x, P

    PHt = P[:, idx]
    K = np.linalg.solve(S, PHt.T).T
    x_new = x + K @ y
    x_new[ANG] = wrap_angle(x_new[ANG])

    A = np.eye(N_STATES)
    A[:, idx] -= K
    P_new = A @ P @ A.T + K @ m.R @ K.T
    return x_new, symmetrize(P_new)


def _check_cov(c, name: str) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if not np.all(np.isfinite(c)):
        raise ValueError(f"{name} has non-finite entries")
    return c


def make_gps_measurement(p_odom, cov3, t: float) -> Measurement:
    p = np.asarray(p_odom, dtype=float).reshape(3)
    cov = _check_cov(cov3, "GPS covariance").reshape(3, 3)
    if not np.all(np.isfinite(p)) or not np.isfinite(t):
        raise ValueError("GPS position has non-finite entries")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-9 * max(1.0, np.abs(cov).max())):
        raise ValueError("GPS covariance is not symmetric")
    if np.any(np.diag(cov) <= 0):
        raise ValueError("GPS covariance must have a positive diagonal")
    return Measurement(t, GPS_MASK, p, cov, "gps")


def make_imu_measurement(s: ImuSample) -> Measurement:
    z = np.concatenate([s.orientation, s.angular_velocity, s.linear_acceleration])
    if not np.all(np.isfinite(z)):
        raise ValueError("IMU sample has non-finite entries")
    R = np.zeros((9, 9))
    R[0:3, 0:3] = _check_cov(s.orientation_covariance, "orientation covariance")
    R[3:6, 3:6] = _check_cov(s.angular_velocity_covariance, "angular velocity covariance")
    R[6:9, 6:9] = _check_cov(s.linear_acceleration_covariance, "acceleration covariance")
    return Measurement(s.timestamp, IMU_MASK, z, R, "imu")


class Ekf15:
    """Sequential filter: owns (x, P, t) and applies time-ordered updates.

    Measurements older than the filter time by more than ``late_tolerance``
    are dropped (no history rewind); slightly late ones are applied at the
    current filter time.
    """

    def __init__(self, x0, P0, Q, t0: float, late_tolerance: float = 0.1):
        self.x = np.asarray(x0, dtype=float).reshape(N_STATES).copy()
        self.P = np.asarray(P0, dtype=float).reshape(N_STATES, N_STATES).copy()
        self.Q = np.asarray(Q, dtype=float)
        self.t = float(t0)
        self.late_tolerance = late_tolerance
        self.dropped = 0
        self.skipped = 0
        self.updates = 0

    def predict_to(self, t: float) -> None:
        if t > self.t:
            self.x, self.P = predict(self.x, self.P, self.Q, t - self.t)
            self.t = t

    def update(self, m: Measurement) -> bool:
        if m.timestamp < self.t - self.late_tolerance:
            self.dropped += 1
            return False
        self.predict_to(m.timestamp)
        try:
            self.x, self.P = correct(self.x, self.P, m, strict=True)
        except SingularInnovationError as exc:
            log.warning("%s", exc)
            self.skipped += 1
            return False
        self.updates += 1
        return True

    @property
    def position_variance(self) -> np.ndarray:
        return np.diag(self.P)[POS].copy()
