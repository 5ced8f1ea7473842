import numpy as np
import pytest

from usvplanner.datatypes import (
    OCCUPIED,
    UNKNOWN,
    GridSpec,
    OccupancyGrid,
    PlannedPath,
    Trajectory,
)
from usvplanner.grid import RectObstacle, rasterize
from usvplanner.render import (
    FALLBACK_COLORS,
    STYLE_COLORS,
    Overlay,
    _color_for,
    obstacle_rectangles,
    render_svg,
)


SPEC = GridSpec(0.0, 0.0, 1.0, 10, 5)


@pytest.fixture
def block_grid() -> OccupancyGrid:
    return rasterize(SPEC, [RectObstacle(2, 1, 5, 3)])


def test_obstacle_rectangles__merges_runs(block_grid: OccupancyGrid) -> None:
    assert obstacle_rectangles(block_grid) == [
        (2.0, 1.0, 3.0, 1.0),
        (2.0, 2.0, 3.0, 1.0),
    ]


def test_obstacle_rectangles__run_at_row_end() -> None:
    cells = np.zeros((1, 6), dtype=np.int8)
    cells[0, [0, 4, 5]] = UNKNOWN
    grid = OccupancyGrid(-1.0, 2.0, 0.5, cells)

    assert obstacle_rectangles(grid, UNKNOWN) == [
        (-1.0, 2.0, 0.5, 0.5),
        (1.0, 2.0, 1.0, 0.5),
    ]
    assert obstacle_rectangles(grid, OCCUPIED) == []


def test_render_svg__deterministic(
    block_grid: OccupancyGrid, straight_path: PlannedPath
) -> None:
    overlays = [Overlay(straight_path, "reference")]

    first = render_svg(block_grid, overlays, title="block")
    second = render_svg(block_grid, overlays, title="block")

    assert first == second
    assert first.lstrip().startswith("<?xml")


def test_render_svg__element_ids(block_grid: OccupancyGrid) -> None:
    cells = block_grid.cells.copy()
    cells[4, 9] = UNKNOWN

    document = render_svg(block_grid.with_cells(cells))

    assert 'id="obstacle-0"' in document
    assert 'id="obstacle-1"' in document
    assert 'id="obstacle-2"' not in document
    assert 'id="unknown-0"' in document
    assert 'id="overlay-0"' not in document


def test_render_svg__overlay_labels(
    block_grid: OccupancyGrid, straight_reference: Trajectory
) -> None:
    document = render_svg(
        block_grid, [Overlay(straight_reference, "GOP+LOP", linestyle="--")]
    )

    assert 'id="overlay-0"' in document
    assert "GOP+LOP: 20.00 m" in document


def test_color_for(straight_path: PlannedPath) -> None:
    assert _color_for(Overlay(straight_path, "LOP"), 3) == STYLE_COLORS["LOP"]
    assert _color_for(Overlay(straight_path, "custom", "#000000"), 0) == "#000000"
    assert _color_for(Overlay(straight_path, "custom"), 5) == FALLBACK_COLORS[1]
