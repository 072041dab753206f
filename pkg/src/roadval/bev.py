"""Bird's-eye-view rasters: camera-to-ground warping and map-road rasterization.

Both outputs live on the same metric grid (:class:`GridSpec`) centered on the
vehicle, so overlap metrics can compare them per pixel.

Ground-plane geometry follows the flat-ground pinhole model.  Frames:

* vehicle ground frame: x lateral (right positive), y forward, z up;
  origin on the ground directly below the camera.
* camera frame: x right, y down, z along the optical axis.  With zero
  pitch/roll/yaw the camera looks along +y (vehicle forward).  Pitch is
  positive tilting the view down, yaw positive turning it right, roll
  positive rotating the image clockwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geodesy import LocalFrame, Pose, to_vehicle_frame
from .mapio import RoadElement

# Label id reserved for BEV pixels that received no camera content.
DEFAULT_VOID_ID = 255


@dataclass(frozen=True)
class GridSpec:
    """Metric BEV grid.  Vehicle-forward is decreasing row index.

    ``vehicle_px`` is the (col, row) pixel whose center is the vehicle
    position; pixel (col, row) maps to the ground point
    x = (col - vcol) * resolution, y = (vrow - row) * resolution.
    """

    resolution_m: float
    width_px: int
    height_px: int
    vehicle_px: tuple[int, int]

    def __post_init__(self) -> None:
        if not self.resolution_m > 0:
            raise ValueError("resolution must be > 0")
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("grid dimensions must be positive")
        col, row = self.vehicle_px
        if not (0 <= col < self.width_px and 0 <= row < self.height_px):
            raise ValueError("vehicle pixel must lie inside the grid")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height_px, self.width_px)

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(x lateral, y forward) coordinates of every pixel center, metres."""
        vcol, vrow = self.vehicle_px
        cols = np.arange(self.width_px, dtype=np.float64)
        rows = np.arange(self.height_px, dtype=np.float64)
        x = (cols - vcol) * self.resolution_m
        y = (vrow - rows) * self.resolution_m
        return np.broadcast_to(x, self.shape).copy(), np.broadcast_to(y[:, None], self.shape).copy()

    def reach_m(self) -> float:
        """Distance from the vehicle to the farthest grid corner."""
        vcol, vrow = self.vehicle_px
        dx = max(vcol, self.width_px - 1 - vcol) * self.resolution_m
        dy = max(vrow, self.height_px - 1 - vrow) * self.resolution_m
        return math.hypot(dx, dy)


# 40 m wide x 60 m tall at 0.1 m/px, vehicle bottom-center 10 m above the
# bottom edge.
DEFAULT_GRID = GridSpec(resolution_m=0.1, width_px=400, height_px=600, vehicle_px=(200, 499))


@dataclass(frozen=True)
class CameraModel:
    """Calibrated pinhole camera mounted above the ground plane."""

    fx: float
    fy: float
    cx: float
    cy: float
    camera_height_m: float
    image_width: int
    image_height: int
    pitch_deg: float = 0.0
    roll_deg: float = 0.0
    yaw_deg: float = 0.0

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be > 0")
        if not self.camera_height_m > 0:
            raise ValueError("camera height must be > 0")
        if not (0 <= self.cx < self.image_width and 0 <= self.cy < self.image_height):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True)
class LabelMask:
    """Single-channel class-id raster in camera image space."""

    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.labels.ndim != 2 or self.labels.dtype != np.uint8:
            raise ValueError("labels must be a 2-D uint8 array")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class BevMask:
    """Class-id raster in the BEV grid plus a per-pixel validity channel.

    Invalid pixels (no camera content) carry the reserved void id.
    """

    grid: GridSpec
    labels: np.ndarray
    valid: np.ndarray

    def __post_init__(self) -> None:
        if self.labels.shape != self.grid.shape or self.valid.shape != self.grid.shape:
            raise ValueError("mask shapes must match the grid")


@dataclass(frozen=True)
class RoadMask:
    """Boolean map-road raster in the BEV grid."""

    grid: GridSpec
    road: np.ndarray

    def __post_init__(self) -> None:
        if self.road.shape != self.grid.shape:
            raise ValueError("road mask shape must match the grid")


def _camera_to_world(cam: CameraModel) -> np.ndarray:
    """Rotation taking camera-frame vectors to the vehicle ground frame."""
    base = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])

    def rx(a: float) -> np.ndarray:
        c, s = math.cos(a), math.sin(a)
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])

    def ry(a: float) -> np.ndarray:
        c, s = math.cos(a), math.sin(a)
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])

    def rz(a: float) -> np.ndarray:
        c, s = math.cos(a), math.sin(a)
        return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])

    return (
        base
        @ ry(math.radians(cam.yaw_deg))
        @ rx(-math.radians(cam.pitch_deg))
        @ rz(math.radians(cam.roll_deg))
    )


def ground_homography(cam: CameraModel) -> np.ndarray:
    """3x3 map from homogeneous image pixels to ground-plane (x, y) coordinates.

    For pixel (u, v), H @ (u, v, 1) is the homogeneous ground point; the ray
    hits the ground ahead of the camera exactly when the result's w-component
    is positive.  Rays at or above the horizon have w <= 0 and are flagged per
    pixel by the warp, never as an operation error.
    """
    h = cam.camera_height_m
    rot = _camera_to_world(cam)
    k_inv = np.array(
        [
            [1.0 / cam.fx, 0.0, -cam.cx / cam.fx],
            [0.0, 1.0 / cam.fy, -cam.cy / cam.fy],
            [0.0, 0.0, 1.0],
        ]
    )
    scale = np.array([[h, 0.0, 0.0], [0.0, h, 0.0], [0.0, 0.0, -1.0]])
    return scale @ rot @ k_inv


def pixel_to_ground(cam: CameraModel, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ground-plane intersection of pixel rays: (x, y, hits_ground)."""
    hom = ground_homography(cam)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    pts = np.stack([u, v, np.ones_like(u)])
    mapped = hom @ pts.reshape(3, -1)
    w = mapped[2]
    ok = w > 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(ok, mapped[0] / w, np.nan)
        y = np.where(ok, mapped[1] / w, np.nan)
    shape = np.shape(u)
    return x.reshape(shape), y.reshape(shape), ok.reshape(shape)


def warp_to_bev(
    mask: LabelMask, cam: CameraModel, grid: GridSpec, void_id: int = DEFAULT_VOID_ID
) -> BevMask:
    """Resample a camera-space label mask onto the BEV grid.

    Each BEV pixel center is projected into the image through the inverse
    ground homography and sampled nearest-neighbor, so no new label ids are
    introduced.  Pixels behind the camera or projecting outside the image are
    invalid and carry ``void_id``.
    """
    if (mask.width, mask.height) != (cam.image_width, cam.image_height):
        raise ValueError(
            f"mask is {mask.width}x{mask.height} but camera expects "
            f"{cam.image_width}x{cam.image_height}"
        )
    x, y = grid.pixel_centers()
    hom_inv = np.linalg.inv(ground_homography(cam))
    pts = np.stack([x.ravel(), y.ravel(), np.ones(x.size)])
    img = hom_inv @ pts
    w = img[2]
    in_front = w > 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(in_front, img[0] / w, -1.0)
        v = np.where(in_front, img[1] / w, -1.0)
    ui = np.rint(u).astype(np.int64)
    vi = np.rint(v).astype(np.int64)
    valid = in_front & (ui >= 0) & (ui < mask.width) & (vi >= 0) & (vi < mask.height)

    labels = np.full(x.size, void_id, dtype=np.uint8)
    labels[valid] = mask.labels[vi[valid], ui[valid]]
    return BevMask(grid=grid, labels=labels.reshape(grid.shape), valid=valid.reshape(grid.shape))


def _paint_capsule(
    road: np.ndarray, grid: GridSpec, ax: float, ay: float, bx: float, by: float, half_w: float
) -> None:
    # Restrict to the pixel window covering the capsule's bounding box; a
    # pixel is road when its center lies within half_w of the centerline.
    vcol, vrow = grid.vehicle_px
    res = grid.resolution_m
    pad = half_w + res
    col_lo = max(int(math.floor((min(ax, bx) - pad) / res)) + vcol, 0)
    col_hi = min(int(math.ceil((max(ax, bx) + pad) / res)) + vcol, grid.width_px - 1)
    row_lo = max(vrow - int(math.ceil((max(ay, by) + pad) / res)), 0)
    row_hi = min(vrow - int(math.floor((min(ay, by) - pad) / res)), grid.height_px - 1)
    if col_lo > col_hi or row_lo > row_hi:
        return
    x = (np.arange(col_lo, col_hi + 1, dtype=np.float64) - vcol) * res
    y = (vrow - np.arange(row_lo, row_hi + 1, dtype=np.float64)) * res
    dx = x[None, :] - ax
    dy = y[:, None] - ay
    ex = bx - ax
    ey = by - ay
    seg_len_sq = ex * ex + ey * ey
    t = np.clip((dx * ex + dy * ey) / seg_len_sq, 0.0, 1.0)
    qx = dx - t * ex
    qy = dy - t * ey
    dist_sq = qx * qx + qy * qy
    window = road[row_lo : row_hi + 1, col_lo : col_hi + 1]
    np.logical_or(window, dist_sq <= half_w * half_w, out=window)


def rasterize_roads(
    elements: list[RoadElement], pose: Pose, frame: LocalFrame, grid: GridSpec
) -> RoadMask:
    """Rasterize road elements into the vehicle-centered BEV grid.

    Each element is transformed to the vehicle frame and drawn as a filled
    band of its width with rounded end caps (equivalently: a pixel is road iff
    its center lies within width/2 of the centerline).  The union over all
    elements is returned, so adding elements never clears a pixel.
    """
    road = np.zeros(grid.shape, dtype=bool)
    for el in elements:
        a = to_vehicle_frame(pose, frame, el.a)
        b = to_vehicle_frame(pose, frame, el.b)
        _paint_capsule(road, grid, a.east, a.north, b.east, b.north, el.width_m / 2.0)
    return RoadMask(grid=grid, road=road)


def points_within_elements(
    x: np.ndarray, y: np.ndarray, elements: list[RoadElement], pose: Pose, frame: LocalFrame
) -> np.ndarray:
    """Membership of vehicle-frame points in the buffered road footprint.

    Same inclusion rule as :func:`rasterize_roads`, evaluated at arbitrary
    points instead of grid centers.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    inside = np.zeros(x.shape, dtype=bool)
    for el in elements:
        a = to_vehicle_frame(pose, frame, el.a)
        b = to_vehicle_frame(pose, frame, el.b)
        ex = b.east - a.east
        ey = b.north - a.north
        seg_len_sq = ex * ex + ey * ey
        t = np.clip(((x - a.east) * ex + (y - a.north) * ey) / seg_len_sq, 0.0, 1.0)
        qx = x - a.east - t * ex
        qy = y - a.north - t * ey
        half = el.width_m / 2.0
        inside |= qx * qx + qy * qy <= half * half
    return inside
