from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from usvplanner.datatypes import (
    GridSpec,
    HullParams,
    OccupancyGrid,
    PlannedPath,
    SearchPose,
    Trajectory,
)
from usvplanner.dynamics import DEFAULT_HULL
from usvplanner.grid import RectObstacle, rasterize
from usvplanner.mapping import CameraIntrinsics, CameraPose, look_down_pose
from usvplanner.optimizer import build_reference


# --------------- Vessel Fixtures ---------------------------------------------


@pytest.fixture
def hull() -> HullParams:
    return DEFAULT_HULL


@pytest.fixture
def unit_separation_hull(hull: HullParams) -> HullParams:
    return hull._replace(prop_separation=1.0)


# --------------- Map Fixtures ------------------------------------------------


@pytest.fixture
def empty_grid() -> OccupancyGrid:
    """60 m x 30 m of open water at 0.5 m"""
    return OccupancyGrid.filled(GridSpec(0.0, 0.0, 0.5, 120, 60))


@pytest.fixture
def gap_grid() -> OccupancyGrid:
    """60 m x 40 m with a wall at x = 30 and a 5 m gap centred on y = 20"""
    return rasterize(
        GridSpec(0.0, 0.0, 0.5, 120, 80),
        [RectObstacle(29, 0, 31, 17.5), RectObstacle(29, 22.5, 31, 40)],
    )


@pytest.fixture
def closed_wall_grid() -> OccupancyGrid:
    return rasterize(GridSpec(0.0, 0.0, 0.5, 120, 60), [RectObstacle(29, 0, 31, 30)])


# --------------- Camera Fixtures ---------------------------------------------


@pytest.fixture
def intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=40.0, width=100, height=80)


@pytest.fixture
def nadir_pose() -> CameraPose:
    """20 m above (10, 5); the image covers x in [0, 20], y in [-3, 13]"""
    return look_down_pose(10.0, 5.0, 20.0)


# --------------- Path Fixtures -----------------------------------------------


@pytest.fixture
def straight_path() -> PlannedPath:
    """20 m due east from (5, 15) sampled every 0.25 m"""
    xs = np.linspace(5.0, 25.0, 81)
    return PlannedPath([SearchPose(float(x), 15.0, 0.0) for x in xs], 20.0)


@pytest.fixture
def straight_reference(straight_path: PlannedPath, hull: HullParams) -> Trajectory:
    return build_reference(straight_path, hull, cruise_speed=1.0)


# --------------- Scenario Fixtures -------------------------------------------

MINIMAL_SCENARIO = """\
[scenario]
name = minimal

[map]
width = 40
height = 20

[start]
x = 5
y = 10

[goal]
x = 35
y = 10
"""


@pytest.fixture
def minimal_scenario_text() -> str:
    return MINIMAL_SCENARIO


@pytest.fixture
def scenario_file(tmp_path: Path) -> Callable[..., Path]:
    """Writes scenario text into tmp_path; the default is an empty 40 x 20 map"""

    def factory(text: str = MINIMAL_SCENARIO, name: str = "scenario.ini") -> Path:
        path = tmp_path / name
        path.write_text(text)
        return path

    return factory
