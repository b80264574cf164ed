"""Session datum and the UTM -> odometry frame transform.

The odometry frame is the vehicle frame at the first valid fix: the datum
stores that fix's UTM position and the vehicle's roll/pitch/yaw in the UTM
(ENU) frame. The forward transform T maps odom -> UTM as
``utm = R(roll, pitch, yaw) @ odom + utm0``; GPS fixes are brought into the
odom frame with its inverse.

Written-out forms of this matrix are easy to get wrong (a first-row
``s(theta) s(psi)`` in place of ``s(phi) s(psi)`` is a common slip), so the
rotation is always composed as Rz @ Ry @ Rx and inverted in closed form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geodesy import UtmCoord
from .rotations import euler_to_matrix, wrap_angle

log = logging.getLogger(__name__)


class DatumError(RuntimeError):
    pass


class ZoneMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Datum:
    utm0: UtmCoord
    roll0: float
    pitch0: float
    yaw0: float

    @property
    def zone(self) -> int:
        return self.utm0.zone

    @property
    def rotation(self) -> np.ndarray:
        return euler_to_matrix(self.roll0, self.pitch0, self.yaw0)


class RigidTransform:
    """x -> rotation @ x + translation.

    Transforms built with :meth:`about` remember the point they send to the
    origin and apply as ``rotation @ (x - origin)``, which keeps
    sub-nanometre precision when x is a UTM coordinate in the millions.
    """

    def __init__(self, rotation, translation, origin=None):
        self.rotation = np.asarray(rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(translation, dtype=float).reshape(3)
        self._origin = None if origin is None else np.asarray(origin, dtype=float).reshape(3)

    @classmethod
    def about(cls, rotation, origin) -> "RigidTransform":
        rotation = np.asarray(rotation, dtype=float)
        origin = np.asarray(origin, dtype=float)
        return cls(rotation, -(rotation @ origin), origin)

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        if self._origin is not None:
            return (p - self._origin) @ self.rotation.T
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -(Rt @ self.translation))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)


def make_datum(first_fix: UtmCoord, initial_orientation) -> Datum:
    roll, pitch, yaw = (float(a) for a in wrap_angle(np.asarray(initial_orientation, dtype=float)))
    return Datum(first_fix, roll, pitch, yaw)


class FrameAnchor:
    """Holds the session datum; it can be set exactly once."""

    def __init__(self):
        self._datum: Datum | None = None
        self._t_inv: RigidTransform | None = None

    @property
    def datum(self) -> Datum | None:
        return self._datum

    @property
    def initialized(self) -> bool:
        return self._datum is not None

    def init_datum(self, first_fix: UtmCoord, initial_orientation) -> Datum:
        if self._datum is not None:
            raise DatumError("datum already initialized for this session")
        self._datum = make_datum(first_fix, initial_orientation)
        self._t_inv = build_utm_to_odom(self._datum)
        return self._datum

    @property
    def utm_to_odom_transform(self) -> RigidTransform:
        if self._t_inv is None:
            raise DatumError("datum not initialized")
        return self._t_inv


def build_odom_to_utm(datum: Datum) -> RigidTransform:
    return RigidTransform(datum.rotation, datum.utm0.vector)


def build_utm_to_odom(datum: Datum) -> RigidTransform:
    R = datum.rotation
    return RigidTransform.about(R.T, datum.utm0.vector)


def utm_to_odom(t_inv: RigidTransform, p: UtmCoord, zone: int | None = None) -> np.ndarray:
    """Map a UTM coordinate into the odom frame.

    ``zone`` is the datum zone; when given, a coordinate from another zone is
    rejected.
    """
    if zone is not None and p.zone != zone:
        raise ZoneMismatchError(f"coordinate in zone {p.zone}, datum in zone {zone}")
    return t_inv.apply(p.vector)


def covariance_to_odom(datum: Datum, cov_enu) -> np.ndarray:
    R = datum.rotation
    return R.T @ np.asarray(cov_enu, dtype=float) @ R
