import math
from typing import Dict, List, Optional, Tuple

import numpy as np
import pytest
from pytest import param as case

from usvplanner.config.defaults import DEFECT_TOL
from usvplanner.datatypes import (
    CostWeights,
    GridSpec,
    HullParams,
    OccupancyGrid,
    PlannedPath,
    SearchPose,
    Trajectory,
    VesselState,
)
from usvplanner.grid import DistanceField, RectObstacle, inflate, rasterize
from usvplanner.helper import polyline_length
from usvplanner.nlp import SolveOptions, check_constraint_gradient, check_gradient
from usvplanner.optimizer import (
    DEFAULT_WEIGHTS,
    InvalidReference,
    OptimizerOptions,
    SolverFailure,
    TrajectoryCollision,
    _windows,
    build_reference,
    first_collision,
    max_defect,
    optimize,
    project_reference,
    ramp_acceleration,
    solve_trajectory,
    trajectory_metrics,
    trajectory_problem,
)
from usvplanner.planning.hybrid_astar import search


# Tight enough that two solves of one problem agree far below test tolerances
TIGHT_SOLVE = SolveOptions(
    max_outer_iters=30,
    max_inner_iters=50,
    constraint_tol=1e-8,
    grad_tol=1e-7,
    initial_penalty=1e3,
)


def straight(
    x0: float, x1: float, y: float = 15.0, reverse: bool = False
) -> PlannedPath:
    xs = np.linspace(x0, x1, int(abs(x1 - x0) / 0.25) + 1)
    direction = "reverse" if reverse else "forward"
    return PlannedPath(
        [SearchPose(float(x), y, 0.0, direction) for x in xs], abs(x1 - x0)
    )


@pytest.fixture
def short_reference(hull: HullParams) -> Trajectory:
    return build_reference(straight(5.0, 10.0), hull, cruise_speed=1.0)


def test_build_reference__straight(
    straight_reference: Trajectory, hull: HullParams
) -> None:
    states = straight_reference.states
    accel = ramp_acceleration(hull, 1.0)
    expected_duration = 2 * (1.0 / accel) + (20.0 - 1.0 / accel) / 1.0

    assert straight_reference.provenance == "initial"
    assert straight_reference.dt == pytest.approx(0.1)
    assert straight_reference.duration == pytest.approx(expected_duration, abs=0.1)
    assert states[0, :4] == pytest.approx([5.0, 15.0, 0.0, 0.0])
    assert states[-1, :4] == pytest.approx([25.0, 15.0, 0.0, 0.0])
    assert np.all(states[:, 3] >= 0.0)
    assert np.max(states[:, 3]) == pytest.approx(1.0)
    assert np.all(np.diff(states[:, 0]) >= -1e-12)


def test_ramp_acceleration(hull: HullParams) -> None:
    assert ramp_acceleration(hull, 1.0) == pytest.approx(0.5 * (200 - 77.55) / 85.28)
    # Drag at this speed exceeds the surge limit
    assert ramp_acceleration(hull._replace(u_max=5.0), 3.0) == pytest.approx(0.1)


def test_build_reference__reverse_segment(hull: HullParams) -> None:
    reference = build_reference(straight(15.0, 5.0, reverse=True), hull, 1.0)

    assert np.all(reference.states[:, 3] <= 0.0)
    assert np.min(reference.states[:, 3]) == pytest.approx(-1.0)
    assert reference.states[-1, 0] == pytest.approx(5.0)


def test_build_reference__stops_at_cusp(hull: HullParams) -> None:
    forward = straight(5.0, 15.0).poses
    backward = straight(15.0, 10.0, reverse=True).poses[1:]
    path = PlannedPath(forward + backward, 15.0)

    speeds = build_reference(path, hull, 1.0).states[:, 3]

    first_reverse = int(np.flatnonzero(speeds < 0)[0])
    assert np.all(speeds[:first_reverse] >= 0.0)
    assert np.all(speeds[first_reverse:] <= 0.0)
    assert np.max(speeds) == pytest.approx(1.0)


def test_build_reference__single_pose(hull: HullParams) -> None:
    reference = build_reference(
        PlannedPath([SearchPose(3.0, 4.0, 0.5)], 0.0), hull, 1.0
    )

    assert reference.knot_count == 2
    assert reference.states[-1] == pytest.approx([3.0, 4.0, 0.5, 0.0, 0.0, 0.0])


@pytest.mark.parametrize(
    "path, cruise_speed",
    [
        case(straight(5.0, 10.0), 0.0, id="zero_cruise_speed"),
        case(straight(5.0, 10.0), 3.5, id="cruise_above_hull_limit"),
        case(PlannedPath([], 0.0), 1.0, id="empty_path"),
    ],
)
def test_build_reference__invalid(
    hull: HullParams, path: PlannedPath, cruise_speed: float
) -> None:
    with pytest.raises(InvalidReference):
        build_reference(path, hull, cruise_speed)


def test_project_reference__satisfies_dynamics(
    straight_reference: Trajectory, hull: HullParams
) -> None:
    x0 = straight_reference.state_at(0)

    projected = project_reference(straight_reference, x0, hull)

    lower, upper = hull.control_bounds()
    assert projected.knot_count == straight_reference.knot_count
    assert max_defect(projected.states, projected.controls, hull, 0.1) < 1e-9
    assert np.all(projected.controls >= lower - 1e-9)
    assert np.all(projected.controls <= upper + 1e-9)
    end = projected.states[-1]
    assert math.hypot(end[0] - 25.0, end[1] - 15.0) < 1.0


@pytest.mark.parametrize(
    "points, expected_index",
    [
        case([(5, 15), (20, 15), (40, 15)], None, id="all_free"),
        case([(5, 15), (20, 15), (30, 15), (40, 15)], 2, id="through_wall"),
        case([(5, 15), (-1, 15), (30, 15)], 1, id="off_map"),
    ],
)
def test_first_collision(
    closed_wall_grid: OccupancyGrid,
    points: List[Tuple[float, float]],
    expected_index: Optional[int],
) -> None:
    states = np.zeros((len(points), 6))
    states[:, :2] = points

    assert first_collision(states, closed_wall_grid) == expected_index


@pytest.mark.parametrize(
    "knots, size, overlap, expected_windows",
    [
        case(10, 400, 50, [(0, 10)], id="single_window"),
        case(400, 400, 50, [(0, 400)], id="exact_fit"),
        case(1000, 400, 50, [(0, 400), (350, 750), (700, 1000)], id="three_windows"),
    ],
)
def test_windows(
    knots: int, size: int, overlap: int, expected_windows: List[Tuple[int, int]]
) -> None:
    assert _windows(knots, size, overlap) == expected_windows


def test_trajectory_problem__gradients(
    short_reference: Trajectory, hull: HullParams
) -> None:
    grid = rasterize(GridSpec(0.0, 0.0, 0.5, 40, 40), [RectObstacle(7, 15.3, 8, 16)])
    problem, layout = trajectory_problem(
        short_reference,
        short_reference.state_at(0),
        None,
        hull,
        field=DistanceField(grid),
    )
    warm = project_reference(short_reference, short_reference.state_at(0), hull)
    rng = np.random.default_rng(0)
    base = layout.pack(warm.states, warm.controls)
    assert problem.equality_constraints is not None

    for _ in range(20):
        z = base + rng.normal(scale=0.05, size=base.shape)
        weights = rng.normal(size=layout.intervals * 6)

        assert check_gradient(problem, z) <= 1e-5
        assert check_constraint_gradient(problem, z, weights) <= 1e-5
        residual, jacobian_t = problem.equality_constraints(z)
        jacobian = layout.defect_jacobian(z, hull, 0.1)
        assert jacobian.shape == (residual.size, layout.dim)
        assert jacobian.T @ weights == pytest.approx(jacobian_t(weights), abs=1e-10)


def test_solve_trajectory(
    short_reference: Trajectory, empty_grid: OccupancyGrid, hull: HullParams
) -> None:
    x0 = short_reference.state_at(0)
    xf = VesselState(10.0, 15.0, 0.0)
    opts = OptimizerOptions(window_knots=30, window_overlap=5)

    result = solve_trajectory(short_reference, x0, xf, empty_grid, hull, opts=opts)

    trajectory = result.trajectory
    assert trajectory.provenance == "optimized"
    assert trajectory.knot_count == short_reference.knot_count
    assert trajectory.states[0] == pytest.approx(x0.as_array())
    assert len(result.reports) == len(_windows(short_reference.knot_count, 30, 5))
    assert all(report.converged for report in result.reports)
    assert not result.used_warm_start
    assert result.objective <= result.warm_objective
    assert result.max_defect <= opts.defect_tol
    assert max_defect(trajectory.states, trajectory.controls, hull, 0.1) <= 1e-3


def test_optimize__free_end(
    short_reference: Trajectory, empty_grid: OccupancyGrid, hull: HullParams
) -> None:
    opts = OptimizerOptions()

    trajectory = optimize(
        short_reference, short_reference.state_at(0), None, empty_grid, hull, opts=opts
    )

    assert trajectory.provenance == "optimized"
    assert trajectory.knot_count == short_reference.knot_count
    assert max_defect(trajectory.states, trajectory.controls, hull, 0.1) <= 1e-3


def _roughness(controls: np.ndarray) -> float:
    return float(np.sum(np.diff(controls, axis=0) ** 2))


@pytest.fixture
def block_grid() -> OccupancyGrid:
    """40 m x 20 m with one block mid-field, inflated by 1 m"""
    grid = rasterize(GridSpec(0.0, 0.0, 0.5, 80, 40), [RectObstacle(18, 7, 22, 13)])
    return inflate(grid, 1.0)


def test_solve_trajectory__weight_scaling_invariance(
    short_reference: Trajectory, empty_grid: OccupancyGrid, hull: HullParams
) -> None:
    x0, xf = short_reference.state_at(0), VesselState(10.0, 15.0, 0.0)
    opts = OptimizerOptions(obstacle_weight=0.0, solver=TIGHT_SOLVE)
    scaled = CostWeights(
        *(tuple(10.0 * w for w in block) for block in DEFAULT_WEIGHTS)
    )

    base = solve_trajectory(short_reference, x0, xf, empty_grid, hull, opts=opts)
    tenfold = solve_trajectory(
        short_reference, x0, xf, empty_grid, hull, scaled, opts
    )

    assert not base.used_warm_start
    assert not tenfold.used_warm_start
    assert tenfold.trajectory.states == pytest.approx(
        base.trajectory.states, abs=1e-4
    )


def test_solve_trajectory__smoother_than_warm_start(
    short_reference: Trajectory, empty_grid: OccupancyGrid, hull: HullParams
) -> None:
    result = solve_trajectory(
        short_reference,
        short_reference.state_at(0),
        VesselState(10.0, 15.0, 0.0),
        empty_grid,
        hull,
    )

    assert not result.used_warm_start
    assert _roughness(result.trajectory.controls) <= _roughness(
        result.warm_start.controls
    )


def test_solve_trajectory__shortens_detour(
    block_grid: OccupancyGrid, hull: HullParams
) -> None:
    path = search(SearchPose(5.0, 10.0, 0.0), SearchPose(35.0, 10.0, 0.0), block_grid)
    reference = build_reference(path, hull, cruise_speed=1.6)

    result = solve_trajectory(
        reference,
        VesselState(5.0, 10.0, 0.0),
        VesselState(35.0, 10.0, 0.0),
        block_grid,
        hull,
    )

    assert all(report.converged for report in result.reports)
    assert not result.used_warm_start
    assert result.max_defect <= DEFECT_TOL
    assert polyline_length(result.trajectory.positions) < polyline_length(
        reference.positions
    )
    optimized_yaw_steps = np.abs(np.diff(result.trajectory.controls[:, 1]))
    warm_yaw_steps = np.abs(np.diff(result.warm_start.controls[:, 1]))
    assert np.max(optimized_yaw_steps) < np.max(warm_yaw_steps)


def test_solve_trajectory__windows_join_without_defect(
    short_reference: Trajectory, empty_grid: OccupancyGrid, hull: HullParams
) -> None:
    opts = OptimizerOptions(window_knots=30, window_overlap=5)

    result = solve_trajectory(
        short_reference,
        short_reference.state_at(0),
        VesselState(10.0, 15.0, 0.0),
        empty_grid,
        hull,
        opts=opts,
    )

    states, controls = result.trajectory.states, result.trajectory.controls
    windows = _windows(len(states), 30, 5)
    assert len(windows) > 1
    for start, _ in windows[1:]:
        joint = max_defect(
            states[start - 1 : start + 2], controls[start - 1 : start + 1], hull, 0.1
        )
        assert joint <= opts.defect_tol


def test_solve_trajectory__unconverged_window(
    short_reference: Trajectory, empty_grid: OccupancyGrid, hull: HullParams
) -> None:
    opts = OptimizerOptions(
        solver=SolveOptions(max_outer_iters=1, max_inner_iters=1)
    )

    with pytest.raises(SolverFailure) as e:
        solve_trajectory(
            short_reference,
            short_reference.state_at(0),
            VesselState(10.0, 15.0, 0.0),
            empty_grid,
            hull,
            opts=opts,
        )

    assert e.value.report.status == "max-iters"


def test_solve_trajectory__start_blocked(
    short_reference: Trajectory, closed_wall_grid: OccupancyGrid, hull: HullParams
) -> None:
    with pytest.raises(InvalidReference):
        solve_trajectory(
            short_reference, VesselState(30.0, 15.0, 0.0), None, closed_wall_grid, hull
        )


def test_solve_trajectory__collision(
    short_reference: Trajectory, hull: HullParams
) -> None:
    grid = rasterize(GridSpec(0.0, 0.0, 0.5, 40, 60), [RectObstacle(7, 14, 8, 16)])
    opts = OptimizerOptions(obstacle_weight=0.0)

    with pytest.raises(TrajectoryCollision) as e:
        solve_trajectory(
            short_reference, short_reference.state_at(0), None, grid, hull, opts=opts
        )

    assert e.value.index > 0


@pytest.mark.parametrize(
    "changes",
    [
        case({"defect_tol": 0.0}, id="zero_defect_tolerance"),
        case({"obstacle_weight": -1.0}, id="negative_obstacle_weight"),
        case({"window_knots": 1}, id="tiny_window"),
        case({"window_overlap": 0}, id="no_overlap"),
        case({"window_overlap": 400}, id="overlap_as_large_as_window"),
    ],
)
def test_optimizer_options__invalid(changes: Dict[str, float]) -> None:
    with pytest.raises(ValueError):
        OptimizerOptions()._replace(**changes).validate()


def test_trajectory_metrics__against_itself(straight_reference: Trajectory) -> None:
    metrics = trajectory_metrics(straight_reference, straight_reference)

    assert metrics["rmse"] == pytest.approx(0.0, abs=1e-12)
    assert metrics["max_error"] == pytest.approx(0.0, abs=1e-12)
    assert metrics["length"] == pytest.approx(20.0)
    assert metrics["duration"] == pytest.approx(straight_reference.duration)
    assert metrics["mean_speed"] == pytest.approx(20.0 / straight_reference.duration)


def test_trajectory_metrics__against_path(
    straight_reference: Trajectory, straight_path: PlannedPath
) -> None:
    shifted = straight_reference._replace(
        states=straight_reference.states + np.array([0.0, 0.5, 0, 0, 0, 0])
    )

    metrics = trajectory_metrics(shifted, straight_path)

    assert metrics["rmse"] == pytest.approx(0.5)
    assert metrics["max_error"] == pytest.approx(0.5)
