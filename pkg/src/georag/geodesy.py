"""Geodesic distance on the WGS-84 ellipsoid and accuracy-level bucketing."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

# WGS-84
WGS84_A = 6378137.0
WGS84_F = 1 / 298.257223563
WGS84_B = (1 - WGS84_F) * WGS84_A

MEAN_EARTH_RADIUS_KM = 6371.0088
VINCENTY_TOL = 1e-12
VINCENTY_MAX_ITER = 200


class CoordinateError(ValueError):
    """Latitude/longitude outside the valid range or non-finite."""


@dataclass(frozen=True, slots=True)
class GeoCoord:
    lat: float
    lon: float

    def __post_init__(self) -> None:
        lat, lon = self.lat, self.lon
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise CoordinateError(f"non-finite coordinate ({lat}, {lon})")
        if not -90.0 <= lat <= 90.0:
            raise CoordinateError(f"latitude {lat} outside [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise CoordinateError(f"longitude {lon} outside [-180, 180]")

    @classmethod
    def is_valid(cls, lat: float, lon: float) -> bool:
        return (
            math.isfinite(lat)
            and math.isfinite(lon)
            and -90.0 <= lat <= 90.0
            and -180.0 <= lon <= 180.0
        )


class AccuracyLevel(enum.Enum):
    STREET = 1.0
    CITY = 25.0
    REGION = 200.0
    COUNTRY = 750.0
    CONTINENT = 2500.0

    @property
    def threshold_km(self) -> float:
        return self.value

    @property
    def label(self) -> str:
        return f"{self.value:,.0f} km"


# Finest to coarsest; enum definition order is relied upon.
LEVELS: tuple[AccuracyLevel, ...] = tuple(AccuracyLevel)


class GeodesicResult(NamedTuple):
    km: float
    fallback_used: bool
    iterations: int


def haversine_km(a: GeoCoord, b: GeoCoord, radius_km: float = MEAN_EARTH_RADIUS_KM) -> float:
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2 * radius_km * math.asin(min(1.0, math.sqrt(h)))


def _vincenty_m(a: GeoCoord, b: GeoCoord) -> tuple[float, int] | None:
    """Vincenty inverse; returns (metres, iterations) or None on non-convergence."""
    f = WGS84_F
    L = math.radians(math.remainder(b.lon - a.lon, 360.0))
    U1 = math.atan((1 - f) * math.tan(math.radians(a.lat)))
    U2 = math.atan((1 - f) * math.tan(math.radians(b.lat)))
    sinU1, cosU1 = math.sin(U1), math.cos(U1)
    sinU2, cosU2 = math.sin(U2), math.cos(U2)

    lam = L
    for it in range(1, VINCENTY_MAX_ITER + 1):
        sin_lam, cos_lam = math.sin(lam), math.cos(lam)
        sin_sigma = math.hypot(cosU2 * sin_lam, cosU1 * sinU2 - sinU1 * cosU2 * cos_lam)
        if sin_sigma == 0.0:
            return 0.0, it  # coincident points
        cos_sigma = sinU1 * sinU2 + cosU1 * cosU2 * cos_lam
        sigma = math.atan2(sin_sigma, cos_sigma)
        sin_alpha = cosU1 * cosU2 * sin_lam / sin_sigma
        cos2_alpha = 1 - sin_alpha**2
        # equatorial line: cos2_alpha == 0
        cos_2sm = cos_sigma - 2 * sinU1 * sinU2 / cos2_alpha if cos2_alpha != 0.0 else 0.0
        C = f / 16 * cos2_alpha * (4 + f * (4 - 3 * cos2_alpha))
        lam_prev = lam
        lam = L + (1 - C) * f * sin_alpha * (
            sigma + C * sin_sigma * (cos_2sm + C * cos_sigma * (-1 + 2 * cos_2sm**2))
        )
        if abs(lam) > math.pi:
            return None
        if abs(lam - lam_prev) < VINCENTY_TOL:
            break
    else:
        return None

    u2 = cos2_alpha * (WGS84_A**2 - WGS84_B**2) / WGS84_B**2
    A = 1 + u2 / 16384 * (4096 + u2 * (-768 + u2 * (320 - 175 * u2)))
    B = u2 / 1024 * (256 + u2 * (-128 + u2 * (74 - 47 * u2)))
    d_sigma = B * sin_sigma * (
        cos_2sm
        + B / 4 * (
            cos_sigma * (-1 + 2 * cos_2sm**2)
            - B / 6 * cos_2sm * (-3 + 4 * sin_sigma**2) * (-3 + 4 * cos_2sm**2)
        )
    )
    return WGS84_B * A * (sigma - d_sigma), it


def geodesic(a: GeoCoord, b: GeoCoord) -> GeodesicResult:
    """Ellipsoidal distance between two points, with haversine fallback.

    The pair is put in a canonical order first so the result is exactly
    symmetric in its arguments.
    """
    if (b.lat, b.lon) < (a.lat, a.lon):
        a, b = b, a
    if a == b:
        return GeodesicResult(0.0, False, 0)
    res = _vincenty_m(a, b)
    if res is None:
        return GeodesicResult(haversine_km(a, b), True, VINCENTY_MAX_ITER)
    metres, iters = res
    return GeodesicResult(metres / 1000.0, False, iters)


def geodesic_km(a: GeoCoord, b: GeoCoord) -> float:
    return geodesic(a, b).km


def bucket(distance_km: float) -> frozenset[AccuracyLevel]:
    """Levels whose threshold the error falls within (``<=`` counts as within)."""
    if not math.isfinite(distance_km) or distance_km < 0:
        raise ValueError(f"distance must be finite and non-negative, got {distance_km!r}")
    return frozenset(lvl for lvl in LEVELS if distance_km <= lvl.threshold_km)
