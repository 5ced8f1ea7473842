"""
Deterministic SVG rendering of occupancy grids with path and trajectory
overlays
"""

import io
import logging
from typing import List, NamedTuple, Sequence, Tuple, Union

import matplotlib
from matplotlib.figure import Figure
from matplotlib.patches import Rectangle

from usvplanner.datatypes import (
    OCCUPIED,
    UNKNOWN,
    OccupancyGrid,
    PlannedPath,
    Trajectory,
)
from usvplanner.helper import FloatArray, polyline_length


logger = logging.getLogger(__name__)

SVG_HASH_SALT = "usv-planner"
FIGURE_WIDTH = 8.0  # inches
OBSTACLE_COLOR = "#4a4a4a"
UNKNOWN_COLOR = "#d8d8d8"

# Overlay colours by pipeline variant, then a fallback cycle
STYLE_COLORS = {
    "reference": "#888888",
    "LOP": "#d62728",
    "GP+LOP": "#ff7f0e",
    "GOP+LOP": "#1f77b4",
    "GOP+LP": "#2ca02c",
}
FALLBACK_COLORS = ("#9467bd", "#8c564b", "#e377c2", "#17becf")


class Overlay(NamedTuple):
    item: Union[Trajectory, PlannedPath]
    label: str
    color: str = ""
    linestyle: str = "-"

    @property
    def positions(self) -> FloatArray:
        return self.item.positions

    @property
    def length(self) -> float:
        return polyline_length(self.item.positions)


def obstacle_rectangles(
    grid: OccupancyGrid, state: int = OCCUPIED
) -> List[Tuple[float, float, float, float]]:
    """
    Cells in `state` merged into horizontal runs per row, as
    (x, y, width, height) in metres.
    """
    rectangles = []
    for row in range(grid.nrows):
        marked = grid.cells[row] == state
        col = 0
        while col < grid.ncols:
            if not marked[col]:
                col += 1
                continue
            start = col
            while col < grid.ncols and marked[col]:
                col += 1
            rectangles.append(
                (
                    grid.origin_x + start * grid.resolution,
                    grid.origin_y + row * grid.resolution,
                    (col - start) * grid.resolution,
                    grid.resolution,
                )
            )
    return rectangles


def _color_for(overlay: Overlay, index: int) -> str:
    if overlay.color:
        return overlay.color
    return STYLE_COLORS.get(
        overlay.label, FALLBACK_COLORS[index % len(FALLBACK_COLORS)]
    )


def render_svg(
    grid: OccupancyGrid, overlays: Sequence[Overlay] = (), title: str = ""
) -> str:
    aspect = grid.height / grid.width
    height = min(max(FIGURE_WIDTH * aspect, 2.0), FIGURE_WIDTH)
    figure = Figure(figsize=(FIGURE_WIDTH, height))
    axes = figure.add_subplot(1, 1, 1)
    axes.set_xlim(grid.origin_x, grid.origin_x + grid.width)
    axes.set_ylim(grid.origin_y, grid.origin_y + grid.height)
    axes.set_aspect("equal")
    axes.set_xlabel("x (m)")
    axes.set_ylabel("y (m)")
    if title:
        axes.set_title(title)

    patches = [
        (rectangle, OBSTACLE_COLOR, "obstacle")
        for rectangle in obstacle_rectangles(grid, OCCUPIED)
    ] + [
        (rectangle, UNKNOWN_COLOR, "unknown")
        for rectangle in obstacle_rectangles(grid, UNKNOWN)
    ]
    counters = {"obstacle": 0, "unknown": 0}
    for (x, y, width, cell_height), color, kind in patches:
        patch = Rectangle((x, y), width, cell_height, facecolor=color, linewidth=0)
        patch.set_gid(f"{kind}-{counters[kind]}")
        counters[kind] += 1
        axes.add_patch(patch)

    for index, overlay in enumerate(overlays):
        positions = overlay.positions
        color = _color_for(overlay, index)
        (line,) = axes.plot(
            positions[:, 0],
            positions[:, 1],
            color=color,
            linestyle=overlay.linestyle,
            linewidth=1.5,
            label=overlay.label,
        )
        line.set_gid(f"overlay-{index}")
        axes.text(
            0.02,
            0.03 + 0.06 * index,
            f"{overlay.label}: {overlay.length:.2f} m",
            transform=axes.transAxes,
            color=color,
            fontsize=8,
        )
    if overlays:
        axes.legend(loc="upper right", fontsize=8)

    buffer = io.StringIO()
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "none"}):
        figure.savefig(buffer, format="svg", metadata={"Date": None})
    logger.debug(
        "Rendered %d obstacle runs and %d overlays", counters["obstacle"], len(overlays)
    )
    return buffer.getvalue()
