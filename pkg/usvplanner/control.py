"""
Closed-loop tracking of a trajectory by receding-horizon NMPC or by a
pure-pursuit PID baseline, simulated against the hull model
"""

import logging
import math
from typing import Callable, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from usvplanner.config.defaults import (
    INTEGRATION_DT,
    NEWTON_INITIAL_PENALTY,
    NMPC_DT,
    NMPC_GRAD_TOL,
    NMPC_HORIZON,
    NMPC_MAX_INNER_ITERS,
    NMPC_MAX_OUTER_ITERS,
    NMPC_W_TAU,
    NMPC_W_U,
    NMPC_W_X,
    PID_HEADING_GAINS,
    PID_HEADING_INTEGRAL_CLAMP,
    PID_LOOKAHEAD,
    PID_SPEED_GAINS,
    PID_SPEED_INTEGRAL_CLAMP,
    TRACKING_SETTLE_TIME,
)
from usvplanner.datatypes import (
    ControlInput,
    CostWeights,
    HullParams,
    OccupancyGrid,
    Trajectory,
    VesselState,
)
from usvplanner.dynamics import (
    IntegrationError,
    feedforward_controls,
    rk4_batch,
    step_rk4,
)
from usvplanner.helper import FloatArray, stopwatch, wrap_angle
from usvplanner.nlp import NlpProblem, SolveOptions, SolveReport, minimize
from usvplanner.transcription import (
    ShootingLayout,
    control_cost,
    smoothness_cost,
    tracking_cost,
)


logger = logging.getLogger(__name__)

Gains = Tuple[float, float, float]
StopCondition = Callable[[VesselState, float], bool]


class TrackingAborted(Exception):
    def __init__(self, message: str, log: Optional["TrackingLog"] = None) -> None:
        super().__init__(message)
        self.log = log


# --------------- Configuration ----------------------------------------------


class NmpcConfig(NamedTuple):
    horizon: int = NMPC_HORIZON
    dt: float = NMPC_DT
    weights: CostWeights = CostWeights(NMPC_W_X, NMPC_W_TAU, NMPC_W_U)
    solver_opts: SolveOptions = SolveOptions(
        max_outer_iters=NMPC_MAX_OUTER_ITERS,
        max_inner_iters=NMPC_MAX_INNER_ITERS,
        grad_tol=NMPC_GRAD_TOL,
        initial_penalty=NEWTON_INITIAL_PENALTY,
    )

    def validate(self) -> "NmpcConfig":
        if self.horizon < 2:
            raise ValueError("the NMPC horizon needs at least two knots")
        if not self.dt > 0:
            raise ValueError("the control period must be positive")
        self.weights.validate()
        self.solver_opts.validate()
        return self


class PidConfig(NamedTuple):
    heading_gains: Gains = PID_HEADING_GAINS
    speed_gains: Gains = PID_SPEED_GAINS
    lookahead: float = PID_LOOKAHEAD
    heading_integral_clamp: float = PID_HEADING_INTEGRAL_CLAMP
    speed_integral_clamp: float = PID_SPEED_INTEGRAL_CLAMP
    dt: float = INTEGRATION_DT

    def validate(self) -> "PidConfig":
        if min(self.heading_gains + self.speed_gains) < 0:
            raise ValueError("PID gains must be non-negative")
        if not self.lookahead > 0:
            raise ValueError("the pure-pursuit lookahead must be positive")
        if self.heading_integral_clamp < 0 or self.speed_integral_clamp < 0:
            raise ValueError("integral clamps must be non-negative")
        if not self.dt > 0:
            raise ValueError("the control period must be positive")
        return self


ControllerConfig = Union[NmpcConfig, PidConfig]


def reference_index(reference: Trajectory, t: float) -> int:
    return min(max(int(round(t / reference.dt)), 0), reference.knot_count - 1)


# --------------- NMPC -------------------------------------------------------


class NmpcWarmStart(NamedTuple):
    """
    Previous window solution, its multipliers and the control that was
    actually applied
    """

    applied: FloatArray
    states: Optional[FloatArray] = None
    controls: Optional[FloatArray] = None
    multipliers: Optional[FloatArray] = None

    @classmethod
    def at_rest(cls) -> "NmpcWarmStart":
        return cls(np.zeros(2))

    def shifted(
        self, initial: FloatArray, horizon: int, params: HullParams, dt: float
    ) -> Optional[Tuple[FloatArray, FloatArray, Optional[FloatArray]]]:
        """
        The previous solution advanced by one interval: the tail is extended
        by repeating the last control, and the first knot becomes `initial`.
        """
        if self.states is None or self.controls is None:
            return None
        if len(self.controls) != horizon or len(self.states) != horizon + 1:
            return None
        controls = np.vstack([self.controls[1:], self.controls[-1:]])
        tail = rk4_batch(self.states[-1], self.controls[-1], params, dt)
        states = np.vstack([self.states[1:], tail[None]])
        turns = initial[2] - states[0, 2]
        states[:, 2] += turns - wrap_angle(turns)
        states[0] = initial
        multipliers = None
        if self.multipliers is not None:
            rows = self.multipliers.reshape(horizon, -1)
            multipliers = np.vstack([rows[1:], rows[-1:]]).ravel()
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(controls))):
            return None
        return states, controls, multipliers


class NmpcStep(NamedTuple):
    control: ControlInput
    predicted: FloatArray
    report: SolveReport
    degraded: bool
    warm: NmpcWarmStart


def _window_reference(
    reference: Trajectory, t_now: float, cfg: NmpcConfig, params: HullParams
) -> Tuple[FloatArray, FloatArray]:
    """
    Reference knots and controls at t_now + j * dt. A reference that was
    never solved against the dynamics carries no usable controls, so its
    feedforward is derived from the knots; past the end the reference holds.
    """
    times = t_now + np.arange(cfg.horizon + 1) * cfg.dt
    indices = np.array([reference_index(reference, t) for t in times])
    states = reference.states[indices]
    if reference.provenance == "initial":
        return states, feedforward_controls(states, params, cfg.dt)
    controls = np.zeros((cfg.horizon, 2))
    live = indices[:-1] < len(reference.controls)
    controls[live] = reference.controls[indices[:-1][live]]
    return states, controls


def _rollout(
    initial: FloatArray, controls: FloatArray, params: HullParams, dt: float
) -> FloatArray:
    states = np.empty((len(controls) + 1, len(initial)))
    states[0] = initial
    for i, control in enumerate(controls):
        states[i + 1] = rk4_batch(states[i], control, params, dt)
    return states


def nmpc_problem(
    initial: FloatArray,
    ref_states: FloatArray,
    ref_controls: FloatArray,
    previous: FloatArray,
    cfg: NmpcConfig,
    params: HullParams,
) -> Tuple[NlpProblem, ShootingLayout]:
    """
    One horizon with the first knot pinned: weighted state tracking, control
    effort against the reference controls and the change of control, the
    first change measured from `previous`.
    """
    layout = ShootingLayout(cfg.horizon + 1, initial)
    w = cfg.weights
    previous = np.asarray(previous, dtype=float).reshape(1, 2)
    states_shape = ref_states.shape

    def objective(z: FloatArray) -> Tuple[float, FloatArray]:
        window_states, window_controls = layout.unpack(z)
        terms = (
            tracking_cost(
                window_states, ref_states, np.array(w.w_x), ref_controls.shape
            )
            .plus(
                control_cost(
                    window_controls, np.array(w.w_tau), states_shape, ref_controls
                )
            )
            .plus(
                smoothness_cost(
                    window_controls, np.array(w.w_u), states_shape, previous
                )
            )
        )
        return terms.value, layout.pack_gradient(terms.wrt_states, terms.wrt_controls)

    curvature = layout.quadratic_curvature(w.w_x, w.w_tau, w.w_u, True)
    box_lower, box_upper = layout.bounds(params)
    problem = NlpProblem(
        layout.dim,
        objective,
        lambda z: layout.defects(z, params, cfg.dt),
        box_lower,
        box_upper,
        curvature=lambda z: curvature,
        constraint_jacobian=lambda z: layout.defect_jacobian(z, params, cfg.dt),
    )
    return problem, layout


def nmpc_step(
    current: VesselState,
    reference: Trajectory,
    t_now: float,
    cfg: NmpcConfig,
    params: HullParams,
    warm: Optional[NmpcWarmStart] = None,
) -> NmpcStep:
    """
    Solve one horizon with the current state pinned and apply its first
    control. States, controls and multipliers start from the previous
    solution shifted by one interval, otherwise from a rollout of the
    reference controls. A failed solve re-applies the previous input.
    """
    warm = warm or NmpcWarmStart.at_rest()
    ref_states, ref_controls = _window_reference(reference, t_now, cfg, params)
    lower, upper = params.control_bounds()
    initial = current.as_array()

    multipliers = None
    shifted = warm.shifted(initial, cfg.horizon, params, cfg.dt)
    if shifted is not None:
        states, guess, multipliers = shifted
    else:
        guess = np.clip(ref_controls, lower, upper)
        states = _rollout(initial, guess, params, cfg.dt)
        if not np.all(np.isfinite(states)):
            states = np.repeat(initial[None], cfg.horizon + 1, axis=0)

    problem, layout = nmpc_problem(
        initial, ref_states, ref_controls, warm.applied, cfg, params
    )
    report = minimize(problem, layout.pack(states, guess), cfg.solver_opts, multipliers)
    solved_states, solved_controls = layout.unpack(report.z_star)

    first = solved_controls[0]
    degraded = report.status == "numerical-failure" or not np.all(np.isfinite(first))
    if degraded:
        logger.warning("NMPC solve failed at t=%.2f; holding the previous input", t_now)
        first = warm.applied
        solved_states, solved_controls = states, guess
    elif not report.converged:
        logger.debug(
            "NMPC horizon at t=%.2f stopped unconverged (violation %.2g)",
            t_now,
            report.constraint_violation,
        )
    applied = params.clip_control(ControlInput(*first))
    next_warm = NmpcWarmStart(
        applied.as_array(),
        solved_states,
        solved_controls,
        None if degraded else report.multipliers,
    )
    return NmpcStep(applied, solved_states, report, degraded, next_warm)


# --------------- PID --------------------------------------------------------


class PidMemory:
    def __init__(self) -> None:
        self.heading_integral = 0.0
        self.speed_integral = 0.0
        self.heading_error: Optional[float] = None
        self.speed_error: Optional[float] = None
        self.completed = False

    def reset(self) -> None:
        self.heading_integral = self.speed_integral = 0.0
        self.heading_error = self.speed_error = None


def _pursuit_target(
    current: VesselState, reference: Trajectory, index: int, lookahead: float
) -> int:
    """First knot from index on that is at least lookahead away, else the last"""
    offsets = reference.positions[index:] - (current.x, current.y)
    far = np.flatnonzero(np.hypot(*offsets.T) >= lookahead)
    return index + int(far[0]) if far.size else reference.knot_count - 1


def _pid(
    gains: Gains, error: float, integral: float, last: Optional[float], dt: float
) -> float:
    kp, ki, kd = gains
    derivative = 0.0 if last is None else (error - last) / dt
    return kp * error + ki * integral + kd * derivative


def pid_step(
    current: VesselState,
    reference: Trajectory,
    t_now: float,
    cfg: PidConfig,
    memory: PidMemory,
    params: HullParams,
) -> ControlInput:
    index = reference_index(reference, t_now)
    if t_now >= reference.duration and not memory.completed:
        memory.completed = True
        memory.reset()

    target_index = _pursuit_target(current, reference, index, cfg.lookahead)
    target = reference.states[target_index]
    speed_ref = 0.0 if memory.completed else reference.states[index, 3]
    reverse = reference.states[index, 3] < 0

    dx, dy = target[0] - current.x, target[1] - current.y
    if math.hypot(dx, dy) < 0.5 * cfg.lookahead:
        desired = target[2]
    else:
        desired = math.atan2(dy, dx) + (math.pi if reverse else 0.0)
    heading_error = wrap_angle(desired - current.psi)
    speed_error = speed_ref - current.u

    memory.heading_integral = float(
        np.clip(
            memory.heading_integral + heading_error * cfg.dt,
            -cfg.heading_integral_clamp,
            cfg.heading_integral_clamp,
        )
    )
    memory.speed_integral = float(
        np.clip(
            memory.speed_integral + speed_error * cfg.dt,
            -cfg.speed_integral_clamp,
            cfg.speed_integral_clamp,
        )
    )
    tau_r = _pid(
        cfg.heading_gains,
        heading_error,
        memory.heading_integral,
        memory.heading_error,
        cfg.dt,
    )
    tau_u = _pid(
        cfg.speed_gains, speed_error, memory.speed_integral, memory.speed_error, cfg.dt
    )
    memory.heading_error, memory.speed_error = heading_error, speed_error
    return params.clip_control(ControlInput(tau_u, tau_r))


# --------------- Closed loop ------------------------------------------------


class TrackingLog(NamedTuple):
    """
    Everything sampled at the control rate: executed knots (one more than
    controls), the reference index used at each tick, the controller's wall
    time in seconds, and whether it exceeded the control period.
    """

    executed: Trajectory
    ref_indices: np.ndarray
    solve_times: FloatArray
    overruns: np.ndarray
    degraded_steps: int
    stopped_early: bool

    @property
    def applied(self) -> FloatArray:
        return self.executed.controls

    @property
    def overrun_count(self) -> int:
        return int(np.count_nonzero(self.overruns))


def _steps_per_tick(control_dt: float, sim_dt: float) -> int:
    if not 0 < sim_dt <= control_dt + 1e-12:
        raise ValueError(
            f"plant step {sim_dt} must be positive and at most the"
            f" control period {control_dt}"
        )
    steps = int(round(control_dt / sim_dt))
    if abs(steps * sim_dt - control_dt) > 1e-9:
        raise ValueError("the control period must be a multiple of the plant step")
    return steps


def run_tracking(
    reference: Trajectory,
    x0: VesselState,
    controller: ControllerConfig,
    params: HullParams,
    sim_dt: float = INTEGRATION_DT,
    duration: Optional[float] = None,
    grid: Optional[OccupancyGrid] = None,
    stop_condition: Optional[StopCondition] = None,
) -> TrackingLog:
    """
    Zero-order hold loop: the controller runs every controller.dt seconds and
    the plant integrates its output in sim_dt steps.
    """
    controller.validate()
    control_dt = controller.dt
    substeps = _steps_per_tick(control_dt, sim_dt)
    if duration is None:
        duration = reference.duration + TRACKING_SETTLE_TIME
    if duration < reference.duration:
        raise ValueError("tracking must last at least as long as the reference")
    ticks = max(1, int(math.ceil(duration / control_dt - 1e-9)))

    state = x0
    states = [x0.as_array()]
    controls: List[FloatArray] = []
    indices: List[int] = []
    solve_times: List[float] = []
    degraded = 0
    stopped = False
    warm: Optional[NmpcWarmStart] = None
    memory = PidMemory()

    def partial_log() -> Optional[TrackingLog]:
        if len(states) < 2:
            return None
        return _log(control_dt, states, controls, indices, solve_times, degraded, True)

    for tick in range(ticks):
        t_now = tick * control_dt
        if stop_condition is not None and stop_condition(state, t_now):
            stopped = True
            break
        with stopwatch() as watch:
            if isinstance(controller, NmpcConfig):
                outcome = nmpc_step(state, reference, t_now, controller, params, warm)
                warm, control = outcome.warm, outcome.control
                degraded += outcome.degraded
            else:
                control = pid_step(state, reference, t_now, controller, memory, params)
        indices.append(reference_index(reference, t_now))
        solve_times.append(watch.elapsed)
        controls.append(control.as_array())

        try:
            for _ in range(substeps):
                state = step_rk4(state, control, params, sim_dt)
        except IntegrationError as error:
            raise TrackingAborted(str(error), partial_log()) from error
        if not state.is_finite():
            raise TrackingAborted(
                f"state became non-finite at t={t_now:.2f}", partial_log()
            )
        row = state.as_array()
        row[2] = states[-1][2] + wrap_angle(row[2] - states[-1][2])
        states.append(row)
        if grid is not None and not grid.contains(state.x, state.y):
            raise TrackingAborted(
                f"vessel left the map at ({state.x:.2f}, {state.y:.2f})"
                f" at t={t_now + control_dt:.2f}",
                partial_log(),
            )

    if not controls:
        raise TrackingAborted("stop condition held before the first control tick")
    log = _log(control_dt, states, controls, indices, solve_times, degraded, stopped)
    if log.overrun_count:
        logger.warning(
            "Controller exceeded its %.0f ms period on %d of %d ticks",
            1e3 * control_dt,
            log.overrun_count,
            len(controls),
        )
    return log


def _log(
    control_dt: float,
    states: List[FloatArray],
    controls: List[FloatArray],
    indices: List[int],
    solve_times: List[float],
    degraded: int,
    stopped: bool,
) -> TrackingLog:
    knots = min(len(states), len(controls) + 1)
    executed = Trajectory.from_arrays(
        control_dt,
        np.array(states[:knots]),
        np.array(controls[: knots - 1]),
        "executed",
    )
    times = np.array(solve_times[: knots - 1])
    return TrackingLog(
        executed,
        np.array(indices[: knots - 1], dtype=int),
        times,
        times > control_dt,
        degraded,
        stopped,
    )
