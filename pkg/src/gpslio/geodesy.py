"""WGS-84 <-> UTM conversion.

Transverse Mercator via the Krueger series to sixth order in the third
flattening (Karney 2011 coefficients). Altitude is treated as ellipsoidal
height and passed through untouched; there is no geoid model.

Zones follow the regular 6-degree grid; the Norway/Svalbard exceptions are
not applied. Pass ``forced_zone`` to keep a whole session in one zone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
UTM_K0 = 0.9996
FALSE_EASTING = 500000.0
FALSE_NORTHING_SOUTH = 10000000.0
MAX_UTM_LATITUDE = 84.0

_N = WGS84_F / (2.0 - WGS84_F)
_E2 = WGS84_F * (2.0 - WGS84_F)
_E = math.sqrt(_E2)


def _series(n):
    n2, n3, n4, n5, n6 = n**2, n**3, n**4, n**5, n**6
    alpha = (
        n / 2 - 2 * n2 / 3 + 5 * n3 / 16 + 41 * n4 / 180 - 127 * n5 / 288 + 7891 * n6 / 37800,
        13 * n2 / 48 - 3 * n3 / 5 + 557 * n4 / 1440 + 281 * n5 / 630 - 1983433 * n6 / 1935360,
        61 * n3 / 240 - 103 * n4 / 140 + 15061 * n5 / 26880 + 167603 * n6 / 181440,
        49561 * n4 / 161280 - 179 * n5 / 168 + 6601661 * n6 / 7257600,
        34729 * n5 / 80640 - 3418889 * n6 / 1995840,
        212378941 * n6 / 319334400,
    )
    beta = (
        n / 2 - 2 * n2 / 3 + 37 * n3 / 96 - n4 / 360 - 81 * n5 / 512 + 96199 * n6 / 604800,
        n2 / 48 + n3 / 15 - 437 * n4 / 1440 + 46 * n5 / 105 - 1118711 * n6 / 3870720,
        17 * n3 / 480 - 37 * n4 / 840 - 209 * n5 / 4480 + 5569 * n6 / 90720,
        4397 * n4 / 161280 - 11 * n5 / 504 - 830251 * n6 / 7257600,
        4583 * n5 / 161280 - 108847 * n6 / 3991680,
        20648693 * n6 / 638668800,
    )
    # rectifying radius
    A = WGS84_A / (1 + n) * (1 + n2 / 4 + n4 / 64 + n6 / 256)
    return alpha, beta, A


_ALPHA, _BETA, _A_RECT = _series(_N)


class GeodesyError(ValueError):
    pass


@dataclass
class GeoFix:
    timestamp: float
    latitude: float
    longitude: float
    altitude: float
    position_covariance: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    fix_valid: bool = True

    def __post_init__(self):
        self.position_covariance = np.asarray(self.position_covariance, dtype=float).reshape(3, 3)


@dataclass(frozen=True)
class UtmCoord:
    easting: float
    northing: float
    altitude: float
    zone: int
    hemisphere: str = "north"

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.easting, self.northing, self.altitude])


def zone_for_longitude(lon: float) -> int:
    if lon == 180.0:  # the antimeridian belongs to the last zone
        return 60
    lon = ((lon + 180.0) % 360.0) - 180.0
    return min(int(math.floor((lon + 180.0) / 6.0)) + 1, 60)


def central_meridian(zone: int) -> float:
    return 6.0 * zone - 183.0


def _tau_prime(tau: float) -> float:
    # conformal latitude tangent
    sig = math.sinh(_E * math.atanh(_E * tau / math.hypot(1.0, tau)))
    return tau * math.hypot(1.0, sig) - sig * math.hypot(1.0, tau)


def _tau_from_tau_prime(taup: float) -> float:
    tau = taup
    for _ in range(10):
        tp = _tau_prime(tau)
        dtau = ((taup - tp) / math.hypot(1.0, tp)
                * (1 + (1 - _E2) * tau * tau) / ((1 - _E2) * math.hypot(1.0, tau)))
        tau += dtau
        if abs(dtau) < 1e-15 * max(1.0, abs(tau)):
            break
    return tau


def latlon_to_utm(fix: GeoFix, forced_zone: int | None = None) -> UtmCoord:
    lat, lon = float(fix.latitude), float(fix.longitude)
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise GeodesyError(f"non-finite coordinates ({lat}, {lon})")
    if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
        raise GeodesyError(f"latitude/longitude out of range: ({lat}, {lon})")
    if abs(lat) >= MAX_UTM_LATITUDE:
        raise GeodesyError(f"|latitude| {abs(lat)} >= {MAX_UTM_LATITUDE}: outside the UTM band")
    if forced_zone is not None and not 1 <= forced_zone <= 60:
        raise GeodesyError(f"invalid zone {forced_zone}")

    zone = forced_zone if forced_zone is not None else zone_for_longitude(lon)
    dlon = math.radians(((lon - central_meridian(zone) + 180.0) % 360.0) - 180.0)
    phi = math.radians(lat)

    taup = _tau_prime(math.tan(phi))
    xip = math.atan2(taup, math.cos(dlon))
    etap = math.asinh(math.sin(dlon) / math.hypot(taup, math.cos(dlon)))

    xi, eta = xip, etap
    for j, a in enumerate(_ALPHA, start=1):
        xi += a * math.sin(2 * j * xip) * math.cosh(2 * j * etap)
        eta += a * math.cos(2 * j * xip) * math.sinh(2 * j * etap)

    easting = FALSE_EASTING + UTM_K0 * _A_RECT * eta
    northing = UTM_K0 * _A_RECT * xi
    hemisphere = "north" if lat >= 0 else "south"
    if hemisphere == "south":
        northing += FALSE_NORTHING_SOUTH
    return UtmCoord(easting, northing, float(fix.altitude), zone, hemisphere)


def utm_to_latlon(coord: UtmCoord, timestamp: float = 0.0) -> GeoFix:
    e, n = float(coord.easting), float(coord.northing)
    if not (math.isfinite(e) and math.isfinite(n)):
        raise GeodesyError("non-finite easting/northing")
    if not 1 <= coord.zone <= 60:
        raise GeodesyError(f"invalid zone {coord.zone}")
    if coord.hemisphere not in ("north", "south"):
        raise GeodesyError(f"invalid hemisphere {coord.hemisphere!r}")
    if not 0.0 < e < 1_000_000.0 or not 0.0 <= n <= FALSE_NORTHING_SOUTH:
        raise GeodesyError(f"({e}, {n}) outside the projection domain")

    y = n - (FALSE_NORTHING_SOUTH if coord.hemisphere == "south" else 0.0)
    xi = y / (UTM_K0 * _A_RECT)
    eta = (e - FALSE_EASTING) / (UTM_K0 * _A_RECT)

    xip, etap = xi, eta
    for j, b in enumerate(_BETA, start=1):
        xip -= b * math.sin(2 * j * xi) * math.cosh(2 * j * eta)
        etap -= b * math.cos(2 * j * xi) * math.sinh(2 * j * eta)

    s, c = math.sinh(etap), math.cos(xip)
    taup = math.sin(xip) / math.hypot(s, c)
    lam = math.atan2(s, c)
    lat = math.degrees(math.atan(_tau_from_tau_prime(taup)))
    lon = central_meridian(coord.zone) + math.degrees(lam)
    lon = ((lon + 180.0) % 360.0) - 180.0
    return GeoFix(timestamp, lat, lon, float(coord.altitude))
