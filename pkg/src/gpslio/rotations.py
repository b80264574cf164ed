"""Euler-angle helpers shared by the filter, frame and simulator code.

Convention: ENU world axes, intrinsic ZYX (yaw, pitch, roll), so
R = Rz(yaw) @ Ry(pitch) @ Rx(roll).
"""

import numpy as np
from scipy.spatial.transform import Rotation


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def matrix_to_euler(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`euler_to_matrix`, returns (roll, pitch, yaw)."""
    pitch = -np.arcsin(np.clip(R[2, 0], -1.0, 1.0))
    roll = np.arctan2(R[2, 1], R[2, 2])
    yaw = np.arctan2(R[1, 0], R[0, 0])
    return wrap_angle(np.array([roll, pitch, yaw]))


def euler_rate_matrix(roll: float, pitch: float) -> np.ndarray:
    """Maps body angular velocity to (roll, pitch, yaw) rates."""
    sr, cr = np.sin(roll), np.cos(roll)
    tp, cp = np.tan(pitch), np.cos(pitch)
    return np.array([
        [1.0, sr * tp, cr * tp],
        [0.0, cr, -sr],
        [0.0, sr / cp, cr / cp],
    ])


def euler_to_quat(rpy) -> np.ndarray:
    """(roll, pitch, yaw) -> quaternion (x, y, z, w)."""
    r, p, y = rpy
    return Rotation.from_euler("ZYX", [y, p, r]).as_quat()


def quat_to_euler(q) -> np.ndarray:
    """Quaternion (x, y, z, w) -> (roll, pitch, yaw)."""
    y, p, r = Rotation.from_quat(q).as_euler("ZYX")
    return wrap_angle(np.array([r, p, y]))
