"""WGS84 <-> local metric frame conversion.

The local frame is an azimuthal equirectangular projection on a sphere of
radius 6378137 m anchored at a scenario origin: x points east, y north.
At scenario extents (a few km) its distortion is far below map coarseness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import OsmForecastError

EARTH_RADIUS_M = 6378137.0
MAX_EXTENT_DEG = 1.0
MAX_PLANE_EXTENT_M = 200_000.0
POLAR_LIMIT_DEG = 89.999
DEFAULT_BBOX_PAD_M = 125.0


class OutOfExtent(OsmForecastError):
    """Input lies outside the scenario-scale extent the projection supports."""


class DegenerateLatitude(OsmForecastError):
    """Frame origin too close to a pole to recover longitude."""


class EmptyTracks(OsmForecastError):
    """No points were supplied to compute a bounding box."""


class GeoPoint(NamedTuple):
    lat: float
    lon: float


class PlanePoint(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class LocalFrame:
    origin: GeoPoint
    earth_radius: float = EARTH_RADIUS_M

    def __post_init__(self) -> None:
        if not self.earth_radius > 0:
            raise ValueError("earth_radius must be positive")
        lat, lon = self.origin
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
            raise ValueError(f"origin out of range: {self.origin}")


def wrap_degrees(delta):
    """Wrap an angle difference in degrees to (-180, 180]."""
    wrapped = np.mod(np.asarray(delta, dtype=float) + 180.0, 360.0) - 180.0
    wrapped = np.where(wrapped == -180.0, 180.0, wrapped)
    return wrapped if wrapped.ndim else float(wrapped)


def to_plane(frame: LocalFrame, p: GeoPoint) -> PlanePoint:
    """Project a geographic point into the frame's metric plane."""
    x, y = to_plane_array(frame, np.array([p[0]]), np.array([p[1]]))
    return PlanePoint(float(x[0]), float(y[0]))


def to_plane_array(frame: LocalFrame, lat: np.ndarray, lon: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`to_plane` over arrays of latitudes and longitudes (degrees)."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    lat0, lon0 = frame.origin
    dlat = lat - lat0
    dlon = wrap_degrees(lon - lon0)
    # Closed bound: the 1-degree reference offsets must stay in range.
    bad = ~((np.abs(dlat) <= MAX_EXTENT_DEG) & (np.abs(dlon) <= MAX_EXTENT_DEG))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise OutOfExtent(
            f"point ({lat.flat[i]}, {lon.flat[i]}) is more than {MAX_EXTENT_DEG} deg from origin {tuple(frame.origin)}"
        )
    r = frame.earth_radius
    x = r * np.radians(dlon) * math.cos(math.radians(lat0))
    y = r * np.radians(dlat)
    return x, y


def to_geo(frame: LocalFrame, p: PlanePoint) -> GeoPoint:
    """Inverse of :func:`to_plane`."""
    lat, lon = to_geo_array(frame, np.array([p[0]]), np.array([p[1]]))
    return GeoPoint(float(lat[0]), float(lon[0]))


def to_geo_array(frame: LocalFrame, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lat0, lon0 = frame.origin
    if abs(lat0) >= POLAR_LIMIT_DEG:
        raise DegenerateLatitude(f"origin latitude {lat0} too close to a pole")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(np.hypot(x, y) > MAX_PLANE_EXTENT_M):
        raise OutOfExtent(f"plane point beyond {MAX_PLANE_EXTENT_M:.0f} m of origin")
    r = frame.earth_radius
    lat = lat0 + np.degrees(y / r)
    lon = wrap_degrees(lon0 + np.degrees(x / (r * math.cos(math.radians(lat0)))))
    return lat, np.asarray(lon, dtype=float)


def track_bbox(
    frame: LocalFrame,
    tracks: Iterable[Sequence[PlanePoint]],
    pad: float = DEFAULT_BBOX_PAD_M,
) -> tuple[GeoPoint, GeoPoint]:
    """South-west and north-east geographic corners of the padded box around all track points."""
    if pad < 0:
        raise ValueError("pad must be non-negative")
    xs: list[float] = []
    ys: list[float] = []
    for track in tracks:
        for x, y in track:
            xs.append(x)
            ys.append(y)
    if not xs:
        raise EmptyTracks("track_bbox needs at least one point")
    sw = to_geo(frame, PlanePoint(min(xs) - pad, min(ys) - pad))
    ne = to_geo(frame, PlanePoint(max(xs) + pad, max(ys) + pad))
    return sw, ne
