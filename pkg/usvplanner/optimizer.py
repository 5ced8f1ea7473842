"""
Global trajectory optimization: time-parameterizes a planned path into a
reference, projects it onto the hull dynamics and refines it by minimizing a
weighted tracking/effort/smoothness objective under RK4 dynamics defects.
"""

import logging
import math
from typing import List, NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy import sparse

from usvplanner.config.defaults import (
    CRUISE_SPEED,
    DEFECT_TOL,
    INTEGRATION_DT,
    NEWTON_INITIAL_PENALTY,
    OBSTACLE_MARGIN,
    OBSTACLE_WEIGHT,
    OPTIMIZER_MAX_INNER_ITERS,
    OPTIMIZER_MAX_OUTER_ITERS,
    OPTIMIZER_W_TAU,
    OPTIMIZER_W_U,
    OPTIMIZER_W_X,
    UNKNOWN_AS_OCCUPIED,
    WINDOW_KNOTS,
    WINDOW_OVERLAP,
)
from usvplanner.datatypes import (
    CostWeights,
    HullParams,
    Metrics,
    OccupancyGrid,
    PlannedPath,
    Trajectory,
    VesselState,
)
from usvplanner.dynamics import rk4_batch, rk4_batch_linearized
from usvplanner.grid import DistanceField
from usvplanner.helper import FloatArray, polyline_length, wrap_angle
from usvplanner.nlp import NlpProblem, SolveOptions, SolveReport, minimize
from usvplanner.transcription import (
    ShootingLayout,
    control_cost,
    smoothness_cost,
    tracking_cost,
)


logger = logging.getLogger(__name__)

DEFAULT_WEIGHTS = CostWeights(OPTIMIZER_W_X, OPTIMIZER_W_TAU, OPTIMIZER_W_U)

# Feedback used while projecting a reference onto the dynamics
PROJECTION_HEADING_GAIN = 1.0
PROJECTION_CROSS_TRACK_GAIN = 0.3
PROJECTION_ALONG_TRACK_GAIN = 0.5
PROJECTION_CORRECTIONS = 3

# Fallback when drag at cruise speed leaves no surge authority to accelerate
MIN_RAMP_ACCELERATION = 0.1


class TrajectoryError(Exception):
    pass


class InvalidReference(TrajectoryError):
    pass


class SolverFailure(TrajectoryError):
    def __init__(self, report: SolveReport) -> None:
        super().__init__(
            f"Trajectory solve ended with status {report.status} after"
            f" {report.iterations} outer iterations"
            f" (violation {report.constraint_violation:.3g})"
        )
        self.report = report


class TrajectoryCollision(TrajectoryError):
    def __init__(self, index: int, x: float, y: float) -> None:
        super().__init__(f"Knot {index} at ({x:.2f}, {y:.2f}) is in collision")
        self.index = index


class OptimizerOptions(NamedTuple):
    defect_tol: float = DEFECT_TOL
    obstacle_weight: float = OBSTACLE_WEIGHT
    obstacle_margin: float = OBSTACLE_MARGIN
    window_knots: int = WINDOW_KNOTS
    window_overlap: int = WINDOW_OVERLAP
    unknown_as_occupied: bool = UNKNOWN_AS_OCCUPIED
    solver: SolveOptions = SolveOptions(
        max_outer_iters=OPTIMIZER_MAX_OUTER_ITERS,
        max_inner_iters=OPTIMIZER_MAX_INNER_ITERS,
        initial_penalty=NEWTON_INITIAL_PENALTY,
    )

    def validate(self) -> "OptimizerOptions":
        if not self.defect_tol > 0:
            raise ValueError("defect tolerance must be positive")
        if self.obstacle_weight < 0 or self.obstacle_margin < 0:
            raise ValueError("obstacle weight and margin must be non-negative")
        if self.window_knots < 2:
            raise ValueError("windows need at least two knots")
        if not 0 < self.window_overlap < self.window_knots - 1:
            raise ValueError("window overlap must be positive and below the size")
        self.solver.validate()
        return self


class OptimizationResult(NamedTuple):
    trajectory: Trajectory
    warm_start: Trajectory
    reports: List[SolveReport]
    objective: float
    warm_objective: float
    used_warm_start: bool
    max_defect: float


# --------------- Reference construction -------------------------------------


class _SpeedRamp(NamedTuple):
    """Trapezoidal speed profile over one direction segment, ending at rest"""

    length: float
    start_speed: float
    peak: float
    accel: float
    decel: float

    @classmethod
    def plan(
        cls, length: float, start_speed: float, cruise: float, accel: float
    ) -> "_SpeedRamp":
        peak = min(cruise, math.sqrt(accel * length + 0.5 * start_speed**2))
        if peak < start_speed:
            # Too short to cruise: brake from the entry speed over the whole length
            decel = start_speed**2 / (2 * length)
            return cls(length, start_speed, start_speed, accel, decel)
        return cls(length, start_speed, peak, accel, accel)

    @property
    def _phases(self) -> Tuple[float, float, float]:
        t_up = (self.peak - self.start_speed) / self.accel
        s_up = (self.peak**2 - self.start_speed**2) / (2 * self.accel)
        t_down = self.peak / self.decel
        s_down = self.peak**2 / (2 * self.decel)
        t_cruise = max(0.0, self.length - s_up - s_down) / self.peak
        return t_up, t_cruise, t_down

    @property
    def duration(self) -> float:
        return sum(self._phases)

    def evaluate(self, t: FloatArray) -> Tuple[FloatArray, FloatArray]:
        """Distance travelled and speed at times t after the segment start"""
        t_up, t_cruise, t_down = self._phases
        t = np.clip(t, 0.0, t_up + t_cruise + t_down)
        s_up = self.start_speed * t_up + 0.5 * self.accel * t_up**2
        s_cruise = s_up + self.peak * t_cruise
        late = np.maximum(t - t_up - t_cruise, 0.0)
        speed = np.where(
            t < t_up,
            self.start_speed + self.accel * t,
            np.where(late > 0, self.peak - self.decel * late, self.peak),
        )
        distance = np.where(
            t < t_up,
            self.start_speed * t + 0.5 * self.accel * t**2,
            np.where(
                late > 0,
                s_cruise + self.peak * late - 0.5 * self.decel * late**2,
                s_up + self.peak * (t - t_up),
            ),
        )
        return np.minimum(distance, self.length), np.maximum(speed, 0.0)


def ramp_acceleration(params: HullParams, cruise_speed: float) -> float:
    """Half of the surge acceleration still available at cruise speed"""
    accel = 0.5 * (params.tau_u_max - params.d11 * cruise_speed) / params.m11
    return accel if accel > 0 else MIN_RAMP_ACCELERATION


def _stationary(x: float, y: float, psi: float, dt: float) -> Trajectory:
    state = [x, y, psi, 0.0, 0.0, 0.0]
    return Trajectory.from_arrays(dt, [state, state], np.zeros((1, 2)), "initial")


def build_reference(
    path: PlannedPath,
    params: HullParams,
    cruise_speed: float = CRUISE_SPEED,
    dt: float = INTEGRATION_DT,
    initial_speed: float = 0.0,
) -> Trajectory:
    """
    Time-parameterize a path: every run of poses with one travel direction
    gets a trapezoidal speed profile that comes to rest at its end, so the
    vessel stops at every cusp and at the goal.
    """
    if not 0 < cruise_speed <= params.u_max:
        raise InvalidReference(
            f"cruise speed must lie in (0, {params.u_max}], got {cruise_speed}"
        )
    if not dt > 0:
        raise InvalidReference(f"knot spacing must be positive, got {dt}")
    poses = path.as_array()
    if not len(poses):
        raise InvalidReference("cannot build a reference from an empty path")

    steps = np.hypot(*np.diff(poses[:, :2], axis=0).T)
    poses = poses[np.concatenate([[True], steps > 1e-9])]
    if len(poses) < 2:
        return _stationary(*poses[0, :3], dt)

    arc = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(poses[:, :2], axis=0).T))])
    headings = np.unwrap(poses[:, 2])
    # Pose i+1 carries the direction of travel from pose i
    signs = poses[1:, 3]
    breaks = np.concatenate([[0], np.flatnonzero(np.diff(signs)) + 1, [len(signs)]])

    accel = ramp_acceleration(params, cruise_speed)
    start_speed = min(abs(initial_speed), cruise_speed)
    ramps = []
    for begin, end in zip(breaks[:-1], breaks[1:]):
        ramp = _SpeedRamp.plan(arc[end] - arc[begin], start_speed, cruise_speed, accel)
        ramps.append((arc[begin], signs[begin], ramp))
        start_speed = 0.0

    total_time = sum(ramp.duration for _, _, ramp in ramps)
    intervals = max(1, math.ceil(total_time / dt - 1e-9))
    times = np.arange(intervals + 1) * dt
    distance = np.full(len(times), arc[-1])
    speed = np.zeros(len(times))
    segment_start = 0.0
    for offset, sign, ramp in ramps:
        segment_end = segment_start + ramp.duration
        inside = (times >= segment_start) & (times < segment_end)
        travelled, segment_speed = ramp.evaluate(times[inside] - segment_start)
        distance[inside] = offset + travelled
        speed[inside] = sign * segment_speed
        segment_start = segment_end

    psi = np.interp(distance, arc, headings)
    states = np.zeros((len(times), 6))
    states[:, 0] = np.interp(distance, arc, poses[:, 0])
    states[:, 1] = np.interp(distance, arc, poses[:, 1])
    states[:, 2] = psi
    states[:, 3] = np.clip(speed, -params.u_max, params.u_max)
    states[:, 5] = np.clip(np.gradient(psi, dt), -params.r_max, params.r_max)
    logger.debug(
        "Reference over %.1f m: %d knots, %d direction segments",
        arc[-1],
        len(times),
        len(ramps),
    )
    return Trajectory.from_arrays(dt, states, np.zeros((intervals, 2)), "initial")


# --------------- Dynamics projection ----------------------------------------


def _tracking_targets(
    state: FloatArray, here: FloatArray, ahead: FloatArray, params: HullParams
) -> FloatArray:
    """Surge speed and yaw rate that steer state back onto the reference"""
    c, s = math.cos(here[2]), math.sin(here[2])
    dx, dy = state[0] - here[0], state[1] - here[1]
    along = c * dx + s * dy
    cross = -s * dx + c * dy
    direction = -1.0 if ahead[3] < 0 else 1.0
    u_target = ahead[3] - PROJECTION_ALONG_TRACK_GAIN * along
    r_target = (
        ahead[5]
        + PROJECTION_HEADING_GAIN * wrap_angle(here[2] - state[2])
        - PROJECTION_CROSS_TRACK_GAIN * direction * cross
    )
    return np.array(
        [
            np.clip(u_target, -params.u_max, params.u_max),
            np.clip(r_target, -params.r_max, params.r_max),
        ]
    )


def _inverse_dynamics(
    state: FloatArray, target: FloatArray, params: HullParams, dt: float
) -> FloatArray:
    _, _, _, u, v, r = state
    return np.array(
        [
            params.m11 * (target[0] - u) / dt - params.m22 * v * r + params.d11 * u,
            params.m33 * (target[1] - r) / dt
            + (params.m22 - params.m11) * u * v
            + params.d33 * r,
        ]
    )


def project_reference(
    reference: Trajectory, x0: VesselState, params: HullParams
) -> Trajectory:
    """
    Roll the hull model forward from x0, choosing each control by inverse
    dynamics refined with a few least-squares corrections on the RK4 step,
    so that the result satisfies the dynamics exactly.
    """
    ref, dt = reference.states, reference.dt
    lower, upper = params.control_bounds()
    states = np.empty_like(ref)
    controls = np.empty((len(ref) - 1, 2))
    states[0] = _aligned(x0, ref[0, 2])
    for i in range(len(ref) - 1):
        target = _tracking_targets(states[i], ref[i], ref[i + 1], params)
        tau = np.clip(_inverse_dynamics(states[i], target, params, dt), lower, upper)
        for _ in range(PROJECTION_CORRECTIONS):
            step = rk4_batch_linearized(states[i][None], tau[None], params, dt)
            achieved = step.next_states[0, [3, 5]]
            jacobian = step.wrt_control[0][[3, 5]]
            delta = np.linalg.lstsq(jacobian, target - achieved, rcond=None)[0]
            tau = np.clip(tau + delta, lower, upper)
        controls[i] = tau
        states[i + 1] = rk4_batch(states[i], tau, params, dt)
    return Trajectory.from_arrays(dt, states, controls, "initial")


def _aligned(state: VesselState, psi_anchor: float) -> FloatArray:
    """State as an array whose heading is the branch nearest psi_anchor"""
    values = state.as_array()
    values[2] = psi_anchor + wrap_angle(values[2] - psi_anchor)
    return values


# --------------- Optimization -----------------------------------------------


def _windows(knots: int, size: int, overlap: int) -> List[Tuple[int, int]]:
    """Half-open knot ranges; each window after the first starts `overlap`
    knots before the end of the previous one"""
    windows = []
    start = 0
    while True:
        end = min(start + size, knots)
        windows.append((start, end))
        if end == knots:
            return windows
        start = end - overlap


class _Objective:
    def __init__(
        self,
        layout: ShootingLayout,
        reference: FloatArray,
        weights: CostWeights,
        field: Optional[DistanceField],
        opts: OptimizerOptions,
        previous: Optional[FloatArray],
    ) -> None:
        self.layout = layout
        self.reference = reference
        self.weights = weights
        self.field = field
        self.opts = opts
        self.previous = previous
        self._quadratic: Optional[sparse.csc_matrix] = None

    def evaluate(
        self, states: FloatArray, controls: FloatArray
    ) -> Tuple[float, FloatArray, FloatArray]:
        w = self.weights
        terms = (
            tracking_cost(states, self.reference, np.array(w.w_x), controls.shape)
            .plus(control_cost(controls, np.array(w.w_tau), states.shape))
            .plus(
                smoothness_cost(
                    controls, np.array(w.w_u), states.shape, self.previous
                )
            )
        )
        value, wrt_states = terms.value, terms.wrt_states
        if self.field is not None and self.opts.obstacle_weight > 0:
            distance, gradient = self.field.query(states[:, :2])
            gap = np.maximum(0.0, self.opts.obstacle_margin - distance)
            value += self.opts.obstacle_weight * float(gap @ gap)
            push = 2.0 * self.opts.obstacle_weight * gap
            wrt_states[:, :2] -= push[:, None] * gradient
        return value, wrt_states, terms.wrt_controls

    def __call__(self, z: FloatArray) -> Tuple[float, FloatArray]:
        states, controls = self.layout.unpack(z)
        value, wrt_states, wrt_controls = self.evaluate(states, controls)
        return value, self.layout.pack_gradient(wrt_states, wrt_controls)

    def curvature(self, z: FloatArray) -> sparse.csc_matrix:
        """Gauss-Newton Hessian; only the obstacle term depends on z"""
        if self._quadratic is None:
            w = self.weights
            self._quadratic = self.layout.quadratic_curvature(
                w.w_x, w.w_tau, w.w_u, self.previous is not None
            )
        if self.field is None or self.opts.obstacle_weight <= 0:
            return self._quadratic
        states, _ = self.layout.unpack(z)
        distance, gradient = self.field.query(states[:, :2])
        active = distance < self.opts.obstacle_margin
        blocks = (2.0 * self.opts.obstacle_weight * active)[:, None, None] * (
            gradient[:, :, None] * gradient[:, None, :]
        )
        return self._quadratic + self.layout.position_curvature(blocks)


def _shooting_problem(
    layout: ShootingLayout, objective: _Objective, params: HullParams, dt: float
) -> NlpProblem:
    lower, upper = layout.bounds(params)
    return NlpProblem(
        layout.dim,
        objective,
        lambda z: layout.defects(z, params, dt),
        lower,
        upper,
        curvature=objective.curvature,
        constraint_jacobian=lambda z: layout.defect_jacobian(z, params, dt),
    )


def trajectory_problem(
    reference: Trajectory,
    x0: VesselState,
    xf: Optional[VesselState],
    params: HullParams,
    weights: CostWeights = DEFAULT_WEIGHTS,
    field: Optional[DistanceField] = None,
    opts: OptimizerOptions = OptimizerOptions(),
) -> Tuple[NlpProblem, ShootingLayout]:
    """The full-horizon transcription, exposed for gradient checks"""
    ref = reference.states
    last = None if xf is None else _aligned(xf, ref[-1, 2])
    layout = ShootingLayout(len(ref), _aligned(x0, ref[0, 2]), last)
    objective = _Objective(layout, ref, weights, field, opts, None)
    return _shooting_problem(layout, objective, params, reference.dt), layout


def max_defect(
    states: FloatArray, controls: FloatArray, params: HullParams, dt: float
) -> float:
    predicted = rk4_batch(states[:-1], controls, params, dt)
    return float(np.max(np.abs(states[1:] - predicted)))


def first_collision(
    states: FloatArray, grid: OccupancyGrid, unknown_as_occupied: bool = True
) -> Optional[int]:
    """Index of the first knot outside the map or in a blocked cell"""
    blocked = grid.blocked(unknown_as_occupied)
    cols = np.floor((states[:, 0] - grid.origin_x) / grid.resolution).astype(int)
    rows = np.floor((states[:, 1] - grid.origin_y) / grid.resolution).astype(int)
    inside = (rows >= 0) & (rows < grid.nrows) & (cols >= 0) & (cols < grid.ncols)
    hit = ~inside
    hit[inside] = blocked[rows[inside], cols[inside]]
    indices = np.flatnonzero(hit)
    return int(indices[0]) if indices.size else None


def solve_trajectory(
    reference: Trajectory,
    x0: VesselState,
    xf: Optional[VesselState],
    grid: OccupancyGrid,
    params: HullParams,
    weights: CostWeights = DEFAULT_WEIGHTS,
    opts: OptimizerOptions = OptimizerOptions(),
) -> OptimizationResult:
    """
    Optimize against the reference starting from its dynamics projection.
    Long references are solved window by window; a window is pinned to the
    state its predecessor reached at the window's first knot, and the final
    window alone is pinned to xf (xf None leaves the end free).
    """
    weights.validate()
    opts.validate()
    for name, state in (("start", x0), ("goal", xf)):
        if state is not None and first_collision(
            state.as_array()[None], grid, opts.unknown_as_occupied
        ) is not None:
            raise InvalidReference(f"the {name} state lies in a blocked cell")

    field = DistanceField(grid, opts.unknown_as_occupied)
    warm = project_reference(reference, x0, params)
    ref, dt = reference.states, reference.dt
    states, controls = warm.states.copy(), warm.controls.copy()
    pinned_end = None if xf is None else _aligned(xf, ref[-1, 2])

    reports = []
    windows = _windows(len(ref), opts.window_knots, opts.window_overlap)
    for start, end in windows:
        last = pinned_end if end == len(ref) else None
        previous = controls[start - 1][None] if start > 0 else None
        layout = ShootingLayout(end - start, states[start], last)
        objective = _Objective(layout, ref[start:end], weights, field, opts, previous)
        problem = _shooting_problem(layout, objective, params, dt)
        z0 = layout.pack(states[start:end], controls[start : end - 1])
        report = minimize(problem, z0, opts.solver)
        reports.append(report)
        logger.info(
            "Window %d-%d: %s after %d outer iterations, objective %.4g",
            start,
            end,
            report.status,
            report.iterations,
            report.objective_value,
        )
        if not report.converged:
            raise SolverFailure(report)
        states[start:end], controls[start : end - 1] = layout.unpack(report.z_star)

    full_layout = ShootingLayout(len(ref), states[0])
    whole = _Objective(full_layout, ref, weights, field, opts, None)
    objective, _, _ = whole.evaluate(states, controls)
    warm_objective, _, _ = whole.evaluate(warm.states, warm.controls)
    defect = max_defect(states, controls, params, dt)

    used_warm = False
    if defect > opts.defect_tol or objective > warm_objective:
        warm_defect = max_defect(warm.states, warm.controls, params, dt)
        logger.warning(
            "Optimized trajectory (objective %.4g, defect %.2g) is worse than"
            " its warm start (objective %.4g, defect %.2g); keeping the warm start",
            objective,
            defect,
            warm_objective,
            warm_defect,
        )
        states, controls = warm.states, warm.controls
        objective, defect, used_warm = warm_objective, warm_defect, True
        if xf is not None:
            logger.warning(
                "Warm start ends %.2f m from the goal",
                math.hypot(states[-1, 0] - xf.x, states[-1, 1] - xf.y),
            )

    collision = first_collision(states, grid, opts.unknown_as_occupied)
    if collision is not None:
        raise TrajectoryCollision(collision, *states[collision, :2])

    trajectory = Trajectory.from_arrays(dt, states, controls, "optimized")
    return OptimizationResult(
        trajectory, warm, reports, objective, warm_objective, used_warm, defect
    )


def optimize(
    reference: Trajectory,
    x0: VesselState,
    xf: Optional[VesselState],
    grid: OccupancyGrid,
    params: HullParams,
    weights: CostWeights = DEFAULT_WEIGHTS,
    opts: OptimizerOptions = OptimizerOptions(),
) -> Trajectory:
    return solve_trajectory(reference, x0, xf, grid, params, weights, opts).trajectory


# --------------- Metrics ----------------------------------------------------


def _distance_to_polyline(points: FloatArray, polyline: FloatArray) -> FloatArray:
    if len(polyline) == 1:
        return np.hypot(*(points - polyline[0]).T)
    a, b = polyline[:-1], polyline[1:]
    ab = b - a
    length_sq = np.maximum(np.sum(ab**2, axis=1), 1e-18)
    offsets = points[:, None, :] - a[None]
    t = np.clip(np.sum(offsets * ab[None], axis=2) / length_sq, 0.0, 1.0)
    nearest = a[None] + t[..., None] * ab[None]
    return np.min(np.hypot(*(points[:, None, :] - nearest).transpose(2, 0, 1)), axis=1)


def trajectory_metrics(
    traj: Trajectory, reference: Union[Trajectory, PlannedPath]
) -> Metrics:
    """
    Position error against a trajectory is measured at equal timestamps
    (the reference holds its final knot afterwards); against a path it is
    the distance to the nearest point of the polyline.
    """
    positions = traj.positions
    if isinstance(reference, Trajectory):
        times = np.minimum(traj.times, reference.duration)
        expected = np.column_stack(
            [
                np.interp(times, reference.times, reference.states[:, 0]),
                np.interp(times, reference.times, reference.states[:, 1]),
            ]
        )
        errors = np.hypot(*(positions - expected).T)
    else:
        errors = _distance_to_polyline(positions, reference.positions)
    length = polyline_length(positions)
    duration = traj.duration
    return Metrics(
        length=length,
        rmse=float(np.sqrt(np.mean(errors**2))),
        max_error=float(np.max(errors)),
        mean_speed=length / duration if duration > 0 else 0.0,
        duration=duration,
    )
