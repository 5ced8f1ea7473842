"""
Operations on occupancy grids: rasterization of obstacle primitives,
inflation and signed distance fields
"""

import logging
import math
from typing import NamedTuple, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from usvplanner.datatypes import FREE, OCCUPIED, GridSpec, OccupancyGrid
from usvplanner.helper import FloatArray


logger = logging.getLogger(__name__)


class RectObstacle(NamedTuple):
    xmin: float
    ymin: float
    xmax: float
    ymax: float


class CircleObstacle(NamedTuple):
    cx: float
    cy: float
    radius: float


Obstacle = Union[RectObstacle, CircleObstacle]


def cell_centers(spec: GridSpec) -> Tuple[FloatArray, FloatArray]:
    xs = spec.origin_x + (np.arange(spec.ncols) + 0.5) * spec.resolution
    ys = spec.origin_y + (np.arange(spec.nrows) + 0.5) * spec.resolution
    return np.meshgrid(xs, ys)


def rasterize(spec: GridSpec, obstacles: Sequence[Obstacle]) -> OccupancyGrid:
    """
    Rectangles mark every cell they overlap with positive area; circles mark
    cells whose centre lies inside them.
    """
    grid = OccupancyGrid.filled(spec, FREE)
    cells = grid.cells.copy()
    centers_x, centers_y = cell_centers(spec)
    half = 0.5 * spec.resolution
    for obstacle in obstacles:
        if isinstance(obstacle, RectObstacle):
            inside = (
                (centers_x - half < obstacle.xmax)
                & (centers_x + half > obstacle.xmin)
                & (centers_y - half < obstacle.ymax)
                & (centers_y + half > obstacle.ymin)
            )
        else:
            inside = (
                np.hypot(centers_x - obstacle.cx, centers_y - obstacle.cy)
                <= obstacle.radius
            )
        cells[inside] = OCCUPIED
    return grid.with_cells(cells)


def disc_structure(radius_cells: int) -> np.ndarray:
    offsets = np.arange(-radius_cells, radius_cells + 1)
    rows, cols = np.meshgrid(offsets, offsets, indexing="ij")
    return rows**2 + cols**2 <= radius_cells**2


def inflate(
    grid: OccupancyGrid, radius: float, unknown_as_occupied: bool = True
) -> OccupancyGrid:
    """
    Dilate obstacles by a disc of ceil(radius / resolution) cells. Cells that
    were unknown and are not covered by the dilation stay unknown.
    """
    if radius < 0:
        raise ValueError(f"inflation radius must be non-negative, got {radius}")
    radius_cells = math.ceil(radius / grid.resolution - 1e-9)
    if radius_cells == 0:
        return grid
    dilated = ndimage.binary_dilation(
        grid.blocked(unknown_as_occupied), structure=disc_structure(radius_cells)
    )
    cells = grid.cells.copy()
    cells[dilated & (cells == FREE)] = OCCUPIED
    if not unknown_as_occupied:
        cells[dilated] = OCCUPIED
    logger.debug(
        "Inflated %d occupied cells to %d (radius %d cells)",
        grid.occupied_count(),
        int(np.count_nonzero(cells == OCCUPIED)),
        radius_cells,
    )
    return grid.with_cells(cells)


def signed_distance(
    grid: OccupancyGrid, unknown_as_occupied: bool = True
) -> FloatArray:
    """
    Distance in metres from each cell centre to the nearest blocked cell
    centre, negative inside blocked regions.
    """
    blocked = grid.blocked(unknown_as_occupied)
    if not blocked.any():
        return np.full(blocked.shape, np.inf)
    outside = ndimage.distance_transform_edt(~blocked)
    inside = ndimage.distance_transform_edt(blocked) if (~blocked).any() else 0.0
    return (outside - inside) * grid.resolution


class DistanceField:
    """
    Bilinear interpolation of the signed distance of a grid, with its spatial
    gradient. Queries outside the grid are clamped to the border cells.
    """

    # Stands in for "no obstacle anywhere"
    FAR = 1e6

    def __init__(self, grid: OccupancyGrid, unknown_as_occupied: bool = True) -> None:
        distance = signed_distance(grid, unknown_as_occupied)
        distance = np.minimum(distance, self.FAR)
        # Interpolation needs at least two samples along each axis
        self._values = np.pad(
            distance,
            ((0, max(0, 2 - distance.shape[0])), (0, max(0, 2 - distance.shape[1]))),
            mode="edge",
        )
        self._origin = np.array([grid.origin_x, grid.origin_y])
        self._resolution = grid.resolution

    def query(self, points: FloatArray) -> Tuple[FloatArray, FloatArray]:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        nrows, ncols = self._values.shape
        scaled = (points - self._origin) / self._resolution - 0.5
        upper = np.array([ncols - 1, nrows - 1], dtype=float)
        clamped = np.clip(scaled, 0.0, upper)
        base = np.minimum(np.floor(clamped), upper - 1).astype(int)
        frac = clamped - base
        col, row = base[:, 0], base[:, 1]
        tx, ty = frac[:, 0], frac[:, 1]

        d00 = self._values[row, col]
        d10 = self._values[row, col + 1]
        d01 = self._values[row + 1, col]
        d11 = self._values[row + 1, col + 1]

        values = (
            (1 - tx) * (1 - ty) * d00
            + tx * (1 - ty) * d10
            + (1 - tx) * ty * d01
            + tx * ty * d11
        )
        gradients = np.empty_like(points)
        gradients[:, 0] = (1 - ty) * (d10 - d00) + ty * (d11 - d01)
        gradients[:, 1] = (1 - tx) * (d01 - d00) + tx * (d11 - d10)
        gradients /= self._resolution
        # Clamped coordinates do not move the interpolated value
        outside = scaled != clamped
        gradients[outside] = 0.0
        return values, gradients
