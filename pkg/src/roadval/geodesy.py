"""WGS84 coordinates, local tangent-plane frames, and vehicle-frame transforms.

Conventions used throughout the package:

* Latitude/longitude are WGS84 degrees.
* Local frames are metric east/north tangent planes under an equirectangular
  projection with R = 6378137 m (WGS84 semi-major axis).  Scene extents are
  a few hundred metres, where the projection error is sub-centimetre.
* Headings are degrees clockwise from true north, normalized to [0, 360).
  This matches common GNSS output and is the contract for all pose inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

EARTH_RADIUS_M = 6378137.0

# Equirectangular mapping breaks down over wide latitude spans; local scenes
# must stay well inside this.
MAX_LOCAL_EXTENT_DEG = 1.0


def normalize_heading(heading_deg: float) -> float:
    """Reduce a heading to [0, 360)."""
    if not math.isfinite(heading_deg):
        raise ValueError(f"heading must be finite, got {heading_deg}")
    return heading_deg % 360.0


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84 position in degrees."""

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"coordinates must be finite, got ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range [-90, 90]: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range [-180, 180]: {self.lon}")


@dataclass(frozen=True)
class Pose:
    """Vehicle position plus heading (degrees clockwise from true north)."""

    position: GeoPoint
    heading_deg: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading_deg", normalize_heading(self.heading_deg))


@dataclass(frozen=True)
class LocalFrame:
    """Metric east/north tangent frame anchored at ``origin`` = (0, 0)."""

    origin: GeoPoint


@dataclass(frozen=True)
class LocalPoint:
    """Metres east/north of a LocalFrame origin (or right/forward of a vehicle)."""

    east: float
    north: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.east) and math.isfinite(self.north)):
            raise ValueError(f"local coordinates must be finite, got ({self.east}, {self.north})")


@dataclass(frozen=True)
class GeoBBox:
    """Axis-aligned geographic box, degrees."""

    min_lat: float
    min_lon: float
    max_lat: float
    max_lon: float

    def __post_init__(self) -> None:
        if self.min_lat > self.max_lat or self.min_lon > self.max_lon:
            raise ValueError("bbox min must not exceed max")

    def contains(self, p: GeoPoint) -> bool:
        return self.min_lat <= p.lat <= self.max_lat and self.min_lon <= p.lon <= self.max_lon


def to_local(frame: LocalFrame, p: GeoPoint) -> LocalPoint:
    """Project a geographic point into the frame's metric east/north plane.

    north = dlat_rad * R, east = dlon_rad * R * cos(origin_lat).
    """
    dlat = p.lat - frame.origin.lat
    dlon = p.lon - frame.origin.lon
    if abs(dlat) > MAX_LOCAL_EXTENT_DEG or abs(dlon) > MAX_LOCAL_EXTENT_DEG:
        raise ValueError(
            f"point too far from frame origin for a local projection: "
            f"dlat={dlat:.3f} deg, dlon={dlon:.3f} deg"
        )
    north = math.radians(dlat) * EARTH_RADIUS_M
    east = math.radians(dlon) * EARTH_RADIUS_M * math.cos(math.radians(frame.origin.lat))
    return LocalPoint(east=east, north=north)


def from_local(frame: LocalFrame, p: LocalPoint) -> GeoPoint:
    """Exact inverse of :func:`to_local`."""
    lat = frame.origin.lat + math.degrees(p.north / EARTH_RADIUS_M)
    lon = frame.origin.lon + math.degrees(
        p.east / (EARTH_RADIUS_M * math.cos(math.radians(frame.origin.lat)))
    )
    return GeoPoint(lat=lat, lon=lon)


def to_vehicle_frame(pose: Pose, frame: LocalFrame, p: LocalPoint) -> LocalPoint:
    """Express a frame point relative to the vehicle: east = right, north = forward.

    Translates so the vehicle sits at the origin, then rotates by +heading so
    the vehicle's forward axis becomes +north of the result.  A rigid
    transform: distances between point pairs are preserved.
    """
    v = to_local(frame, pose.position)
    de = p.east - v.east
    dn = p.north - v.north
    h = math.radians(pose.heading_deg)
    cos_h = math.cos(h)
    sin_h = math.sin(h)
    forward = dn * cos_h + de * sin_h
    right = de * cos_h - dn * sin_h
    return LocalPoint(east=right, north=forward)


def bbox_around(pose: Pose, radius_m: float) -> GeoBBox:
    """Geographic box containing the metric disc of ``radius_m`` around the pose.

    Inverts the equirectangular mapping per axis, so the box contains the
    preimage of every local point within the radius.
    """
    if not (radius_m > 0 and math.isfinite(radius_m)):
        raise ValueError(f"radius must be positive and finite, got {radius_m}")
    lat = pose.position.lat
    lon = pose.position.lon
    dlat = math.degrees(radius_m / EARTH_RADIUS_M)
    dlon = math.degrees(radius_m / (EARTH_RADIUS_M * math.cos(math.radians(lat))))
    return GeoBBox(
        min_lat=max(lat - dlat, -90.0),
        min_lon=lon - dlon,
        max_lat=min(lat + dlat, 90.0),
        max_lon=lon + dlon,
    )
