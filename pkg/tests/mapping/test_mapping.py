from typing import Dict, Tuple

import numpy as np
import pytest
from pytest import param as case

from usvplanner.datatypes import FREE, OCCUPIED, UNKNOWN, GridSpec
from usvplanner.mapping import (
    BehindCamera,
    CameraIntrinsics,
    CameraPose,
    InvalidCameraPose,
    InvalidIntrinsics,
    NoPlaneIntersection,
    PixelOutOfBounds,
    SegMask,
    look_down_pose,
    mask_to_grid,
    project_pixel_to_plane,
    project_world_to_pixel,
    view_grid_spec,
)


VIEW_SPEC = GridSpec(0.0, -3.0, 0.5, 40, 32)


@pytest.mark.parametrize(
    "pixel, expected_point",
    [
        case((50, 40), (10.0, 5.0), id="principal_point"),
        case((60, 40), (12.0, 5.0), id="right_of_centre"),
        case((50, 50), (10.0, 3.0), id="below_centre"),
        case((0, 0), (0.0, 13.0), id="top_left_corner"),
        case((100, 80), (20.0, -3.0), id="bottom_right_corner"),
    ],
)
def test_project_pixel_to_plane(
    intrinsics: CameraIntrinsics,
    nadir_pose: CameraPose,
    pixel: Tuple[float, float],
    expected_point: Tuple[float, float],
) -> None:
    point = project_pixel_to_plane(pixel, intrinsics, nadir_pose)

    assert point == pytest.approx(expected_point)


def test_project_pixel_to_plane__round_trip(
    intrinsics: CameraIntrinsics, nadir_pose: CameraPose
) -> None:
    x, y = project_pixel_to_plane((23.5, 61.25), intrinsics, nadir_pose)

    projection = project_world_to_pixel((x, y, 0.0), intrinsics, nadir_pose)

    assert (projection.u, projection.v) == pytest.approx((23.5, 61.25))
    assert projection.in_bounds


@pytest.mark.parametrize(
    "pixel",
    [
        case((-1, 10), id="left"),
        case((10, 81), id="below"),
        case((100.5, 0), id="right"),
    ],
)
def test_project_pixel_to_plane__out_of_bounds(
    intrinsics: CameraIntrinsics,
    nadir_pose: CameraPose,
    pixel: Tuple[float, float],
) -> None:
    with pytest.raises(PixelOutOfBounds):
        project_pixel_to_plane(pixel, intrinsics, nadir_pose)


def test_project_pixel_to_plane__camera_facing_up(
    intrinsics: CameraIntrinsics,
) -> None:
    facing_up = CameraPose(np.eye(3), [0.0, 0.0, -20.0])

    with pytest.raises(NoPlaneIntersection):
        project_pixel_to_plane((50, 40), intrinsics, facing_up)


def test_project_world_to_pixel__outside_image(
    intrinsics: CameraIntrinsics, nadir_pose: CameraPose
) -> None:
    projection = project_world_to_pixel((40.0, 5.0, 0.0), intrinsics, nadir_pose)

    assert projection.u == pytest.approx(200.0)
    assert not projection.in_bounds


def test_project_world_to_pixel__behind_camera(
    intrinsics: CameraIntrinsics, nadir_pose: CameraPose
) -> None:
    with pytest.raises(BehindCamera):
        project_world_to_pixel((10.0, 5.0, 30.0), intrinsics, nadir_pose)


def test_look_down_pose__yaw(intrinsics: CameraIntrinsics) -> None:
    pose = look_down_pose(0.0, 0.0, 20.0, yaw=np.pi / 2)

    x, y = project_pixel_to_plane((60, 40), intrinsics, pose)

    assert (x, y) == pytest.approx((0.0, 2.0), abs=1e-9)
    assert pose.center == pytest.approx([0.0, 0.0, 20.0])


@pytest.mark.parametrize(
    "rotation",
    [
        case(np.diag([2.0, 1.0, 1.0]), id="scaled"),
        case(np.diag([1.0, 1.0, -1.0]), id="reflection"),
        case(np.ones((3, 3)), id="singular"),
    ],
)
def test_camera_pose__invalid_rotation(rotation: np.ndarray) -> None:
    with pytest.raises(InvalidCameraPose):
        CameraPose(rotation, [0.0, 0.0, 0.0])


def test_camera_pose__non_finite_translation() -> None:
    with pytest.raises(InvalidCameraPose):
        CameraPose(np.eye(3), [0.0, np.nan, 0.0])


@pytest.mark.parametrize(
    "changes",
    [
        case({"fx": 0.0}, id="zero_focal_length"),
        case({"fy": -10.0}, id="negative_focal_length"),
        case({"cx": 100.0}, id="principal_point_right_of_image"),
        case({"cy": -1.0}, id="principal_point_above_image"),
    ],
)
def test_camera_intrinsics__invalid(
    intrinsics: CameraIntrinsics, changes: Dict[str, float]
) -> None:
    with pytest.raises(InvalidIntrinsics):
        intrinsics._replace(**changes).validate()


def test_view_grid_spec(intrinsics: CameraIntrinsics, nadir_pose: CameraPose) -> None:
    spec = view_grid_spec(intrinsics, nadir_pose, 0.5)

    assert spec.origin_x == pytest.approx(VIEW_SPEC.origin_x)
    assert spec.origin_y == pytest.approx(VIEW_SPEC.origin_y)
    assert (spec.ncols, spec.nrows) == (VIEW_SPEC.ncols, VIEW_SPEC.nrows)


def test_view_grid_spec__horizon_in_view(intrinsics: CameraIntrinsics) -> None:
    # Pitched up by 90 degrees: the optical axis is horizontal
    level = CameraPose([[1, 0, 0], [0, 0, -1], [0, 1, 0]], [0.0, 20.0, 0.0])

    with pytest.raises(NoPlaneIntersection):
        view_grid_spec(intrinsics, level, 0.5)


@pytest.mark.parametrize(
    "fill, expected_state",
    [
        case(True, OCCUPIED, id="all_obstacle"),
        case(False, FREE, id="all_water"),
    ],
)
def test_mask_to_grid__uniform_mask(
    intrinsics: CameraIntrinsics,
    nadir_pose: CameraPose,
    fill: bool,
    expected_state: int,
) -> None:
    mask = SegMask(np.full((80, 100), fill))

    grid = mask_to_grid(mask, intrinsics, nadir_pose, VIEW_SPEC)

    assert grid.spec == VIEW_SPEC
    assert np.all(grid.cells == expected_state)


def test_mask_to_grid__left_half_obstacle(
    intrinsics: CameraIntrinsics, nadir_pose: CameraPose
) -> None:
    bits = np.zeros((80, 100), dtype=bool)
    bits[:, :50] = True

    grid = mask_to_grid(SegMask(bits), intrinsics, nadir_pose, VIEW_SPEC)

    assert np.all(grid.cells[:, :20] == OCCUPIED)
    assert np.all(grid.cells[:, 20:] == FREE)


def test_mask_to_grid__cells_outside_view_stay_unknown(
    intrinsics: CameraIntrinsics, nadir_pose: CameraPose
) -> None:
    wide = GridSpec(-10.0, -3.0, 0.5, 60, 32)

    grid = mask_to_grid(
        SegMask(np.zeros((80, 100), dtype=bool)), intrinsics, nadir_pose, wide
    )

    assert np.all(grid.cells[:, :20] == UNKNOWN)
    assert np.all(grid.cells[:, 20:] == FREE)


def test_mask_to_grid__size_mismatch(
    intrinsics: CameraIntrinsics, nadir_pose: CameraPose
) -> None:
    with pytest.raises(InvalidIntrinsics):
        mask_to_grid(
            SegMask(np.zeros((40, 50), dtype=bool)), intrinsics, nadir_pose, VIEW_SPEC
        )
