"""Spherical-Earth kinematics for vessel motion.

States are (lon, lat) in degrees, actions are (SOG knots, COG degrees
clockwise from North, dt hours). One degree of arc is taken as 60 nmi.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

__all__ = [
    "EARTH_RADIUS_KM",
    "NMI_KM",
    "ARCMIN_KM",
    "GeoState",
    "GeoAction",
    "PolarSingularityError",
    "haversine_distance",
    "geo_step",
    "geo_perfect_action",
    "geo_consistency_check",
    "wrap_lon",
]

EARTH_RADIUS_KM = 6378.137
NMI_KM = 1.852
# one nautical mile as the update rule sees it: an arc minute on the sphere
ARCMIN_KM = EARTH_RADIUS_KM * math.pi / (180.0 * 60.0)
POLAR_CUTOFF_DEG = 85.0


class PolarSingularityError(ValueError):
    """The longitude update divides by cos(lat), which vanishes at the poles."""


class GeoState(NamedTuple):
    lon: float
    lat: float


class GeoAction(NamedTuple):
    sog: float
    cog: float
    dt: float


def wrap_lon(lon):
    """Wrap longitudes to [-180, 180)."""
    return (np.asarray(lon, dtype=float) + 180.0) % 360.0 - 180.0


def haversine_distance(p1, p2, radius_km: float = EARTH_RADIUS_KM):
    """Great-circle distance in km between (lon, lat) points in degrees.

    Broadcasts over leading dimensions of array inputs.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    lon1, lat1 = np.radians(p1[..., 0]), np.radians(p1[..., 1])
    lon2, lat2 = np.radians(p2[..., 0]), np.radians(p2[..., 1])
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    d = 2 * radius_km * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    return float(d) if d.ndim == 0 else d


def geo_step(s, a) -> GeoState:
    """Advance a vessel one record: locally flat update on the sphere."""
    lon, lat = float(s[0]), float(s[1])
    sog, cog, dt = float(a[0]), float(a[1]), float(a[2])
    if abs(lat) > POLAR_CUTOFF_DEG:
        raise PolarSingularityError(f"latitude {lat} beyond +-{POLAR_CUTOFF_DEG} deg")
    if dt <= 0:
        raise ValueError("dt must be positive")
    c = math.radians(cog)
    dist_deg = sog * dt / 60.0
    new_lat = lat + math.cos(c) * dist_deg
    new_lon = lon + math.sin(c) * dist_deg / math.cos(math.radians(lat))
    return GeoState(float(wrap_lon(new_lon)), new_lat)


def geo_perfect_action(s, s_next, dt: float) -> GeoAction:
    """Inverse of :func:`geo_step`: the (SOG, COG, dt) that reaches ``s_next``.

    Zero displacement returns COG = 0.
    """
    lat = float(s[1])
    dlat = float(s_next[1]) - lat
    dlon = float(wrap_lon(float(s_next[0]) - float(s[0])))
    east = math.cos(math.radians(lat)) * dlon
    dist_deg = math.hypot(dlat, east)
    if dist_deg == 0.0:
        return GeoAction(0.0, 0.0, float(dt))
    cog = math.degrees(math.atan2(east, dlat)) % 360.0
    return GeoAction(60.0 * dist_deg / dt, cog, float(dt))


def geo_consistency_check(s, a) -> float:
    """Relative gap between the haversine length of one step and SOG*dt.

    SOG*dt is converted with the arc-minute mile the update rule assumes, so
    the result measures only the flat-Earth approximation.
    """
    nominal_km = float(a[0]) * float(a[2]) * ARCMIN_KM
    if nominal_km == 0.0:
        return 0.0
    moved = haversine_distance(s, geo_step(s, a))
    return abs(moved - nominal_km) / nominal_km
