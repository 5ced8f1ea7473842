"""
Pinhole projection between an aerial camera image and the water plane, and
conversion of binary segmentation masks into world-frame occupancy grids
"""

import logging
from typing import NamedTuple, Tuple

import numpy as np
from numpy.typing import ArrayLike

from usvplanner.config.defaults import GRAZING_TOLERANCE
from usvplanner.datatypes import FREE, OCCUPIED, UNKNOWN, GridSpec, OccupancyGrid
from usvplanner.helper import FloatArray


logger = logging.getLogger(__name__)


class MappingError(Exception):
    pass


class InvalidIntrinsics(MappingError):
    pass


class InvalidCameraPose(MappingError):
    pass


class PixelOutOfBounds(MappingError):
    def __init__(self, pixel: Tuple[float, float], width: int, height: int) -> None:
        super().__init__(
            f"Pixel ({pixel[0]}, {pixel[1]}) lies outside the {width}x{height} image"
        )


class NoPlaneIntersection(MappingError):
    pass


class BehindCamera(MappingError):
    pass


class CameraIntrinsics(NamedTuple):
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def validate(self) -> "CameraIntrinsics":
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidIntrinsics("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidIntrinsics("principal point must lie inside the image")
        return self


class CameraPose:
    """
    World-to-camera rigid transform: p_camera = rotation @ p_world + translation
    """

    __slots__ = ("rotation", "translation")

    ORTHONORMAL_TOLERANCE = 1e-9

    def __init__(self, rotation: ArrayLike, translation: ArrayLike) -> None:
        rotation = np.asarray(rotation, dtype=float).reshape(3, 3)
        translation = np.asarray(translation, dtype=float).reshape(3)
        if not np.allclose(
            rotation.T @ rotation, np.eye(3), rtol=0, atol=self.ORTHONORMAL_TOLERANCE
        ):
            raise InvalidCameraPose("rotation is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > self.ORTHONORMAL_TOLERANCE:
            raise InvalidCameraPose("rotation is not a proper rotation (det != +1)")
        if not np.all(np.isfinite(translation)):
            raise InvalidCameraPose("translation must be finite")
        self.rotation = rotation
        self.translation = translation

    @property
    def center(self) -> FloatArray:
        """Camera centre in world coordinates"""
        return -self.rotation.T @ self.translation

    def __repr__(self) -> str:
        return f"CameraPose(center={self.center.tolist()})"


def look_down_pose(x: float, y: float, altitude: float, yaw: float = 0.0) -> CameraPose:
    """
    Nadir-pointing camera above (x, y); the image x-axis points along the
    world direction yaw.
    """
    x_axis = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    z_axis = np.array([0.0, 0.0, -1.0])
    y_axis = np.cross(z_axis, x_axis)
    rotation = np.vstack([x_axis, y_axis, z_axis])
    center = np.array([x, y, altitude])
    return CameraPose(rotation, -rotation @ center)


def _ray_plane_points(
    pixels: FloatArray, intr: CameraIntrinsics, pose: CameraPose, plane_z: float
) -> Tuple[FloatArray, FloatArray]:
    """
    Intersect pixel rays with z = plane_z. Returns the (x, y) points and a mask
    of pixels whose ray actually meets the plane in front of the camera.
    """
    rays_camera = np.column_stack(
        [
            (pixels[:, 0] - intr.cx) / intr.fx,
            (pixels[:, 1] - intr.cy) / intr.fy,
            np.ones(len(pixels)),
        ]
    )
    rays_world = rays_camera @ pose.rotation
    center = pose.center
    ray_z = rays_world[:, 2]
    grazing = np.abs(ray_z) < GRAZING_TOLERANCE
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(grazing, np.nan, (plane_z - center[2]) / ray_z)
    valid = ~grazing & (scale > 0)
    points = center[:2] + scale[:, None] * rays_world[:, :2]
    return points, valid


def project_pixel_to_plane(
    pixel: Tuple[float, float],
    intr: CameraIntrinsics,
    pose: CameraPose,
    plane_z: float = 0.0,
) -> Tuple[float, float]:
    u, v = pixel
    if not (0 <= u <= intr.width and 0 <= v <= intr.height):
        raise PixelOutOfBounds(pixel, intr.width, intr.height)
    points, valid = _ray_plane_points(
        np.array([[u, v]], dtype=float), intr, pose, plane_z
    )
    if not valid[0]:
        raise NoPlaneIntersection(
            f"Ray through pixel ({u}, {v}) does not meet the plane z = {plane_z}"
        )
    return float(points[0, 0]), float(points[0, 1])


class PixelProjection(NamedTuple):
    u: float
    v: float
    in_bounds: bool


def project_world_to_pixel(
    point: ArrayLike, intr: CameraIntrinsics, pose: CameraPose
) -> PixelProjection:
    camera_point = pose.rotation @ np.asarray(point, dtype=float) + pose.translation
    depth = camera_point[2]
    if depth <= 0:
        raise BehindCamera(f"Point {point} lies behind the camera (depth {depth})")
    u = intr.fx * camera_point[0] / depth + intr.cx
    v = intr.fy * camera_point[1] / depth + intr.cy
    return PixelProjection(
        float(u), float(v), 0 <= u <= intr.width and 0 <= v <= intr.height
    )


class SegMask(NamedTuple):
    """Binary labels, one row per image row; True marks an obstacle"""

    bits: "np.ndarray[Tuple[int, int], np.dtype[np.bool_]]"

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])


def mask_to_grid(
    mask: SegMask, intr: CameraIntrinsics, pose: CameraPose, spec: GridSpec
) -> OccupancyGrid:
    if (mask.width, mask.height) != (intr.width, intr.height):
        raise InvalidIntrinsics(
            f"mask is {mask.width}x{mask.height} but the camera images are"
            f" {intr.width}x{intr.height}"
        )
    grid = OccupancyGrid.filled(spec, UNKNOWN)
    rows, cols = np.mgrid[0 : mask.height, 0 : mask.width]
    pixels = np.column_stack([cols.ravel(), rows.ravel()]).astype(float)
    labels = mask.bits.ravel()

    points, valid = _ray_plane_points(pixels, intr, pose, 0.0)
    skipped = int(np.count_nonzero(~valid))
    if skipped:
        logger.info("Skipped %d pixels without a water-plane intersection", skipped)

    cell_cols = np.floor((points[:, 0] - spec.origin_x) / spec.resolution)
    cell_rows = np.floor((points[:, 1] - spec.origin_y) / spec.resolution)
    with np.errstate(invalid="ignore"):
        inside = (
            valid
            & (cell_cols >= 0)
            & (cell_cols < spec.ncols)
            & (cell_rows >= 0)
            & (cell_rows < spec.nrows)
        )
    cell_rows = cell_rows[inside].astype(int)
    cell_cols = cell_cols[inside].astype(int)
    labels = labels[inside]

    cells = grid.cells.copy()
    cells[cell_rows[~labels], cell_cols[~labels]] = FREE
    # Occupied is written last so that it wins over free in shared cells
    cells[cell_rows[labels], cell_cols[labels]] = OCCUPIED
    return grid.with_cells(cells)


def view_grid_spec(
    intr: CameraIntrinsics, pose: CameraPose, resolution: float
) -> GridSpec:
    """Smallest grid aligned to resolution that holds the image's ground footprint"""
    corners = np.array(
        [[0, 0], [intr.width, 0], [0, intr.height], [intr.width, intr.height]],
        dtype=float,
    )
    points, valid = _ray_plane_points(corners, intr, pose, 0.0)
    if not valid.all():
        raise NoPlaneIntersection("the image corners do not all see the water plane")
    low = np.floor(points.min(axis=0) / resolution) * resolution
    high = np.ceil(points.max(axis=0) / resolution) * resolution
    ncols, nrows = np.maximum(np.round((high - low) / resolution).astype(int), 1)
    return GridSpec(float(low[0]), float(low[1]), resolution, int(ncols), int(nrows))
