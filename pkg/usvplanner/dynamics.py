"""
3-DOF surge/sway/yaw model of a twin-propeller catamaran, thrust allocation
and fixed-step RK4 integration
"""

import logging
from typing import NamedTuple, Sequence, Tuple

import numpy as np

from usvplanner.config.defaults import DEFAULT_HULL_PARAMETERS
from usvplanner.datatypes import (
    STATE_DIM,
    ControlInput,
    HullParams,
    ThrusterPair,
    Trajectory,
    VesselState,
)
from usvplanner.helper import FloatArray, wrap_angle


logger = logging.getLogger(__name__)

DEFAULT_HULL = HullParams(**DEFAULT_HULL_PARAMETERS).validate()


class IntegrationError(ValueError):
    pass


def _derivative(states: FloatArray, controls: FloatArray, p: HullParams) -> FloatArray:
    """Vectorized right-hand side over leading axes: (..., 6), (..., 2) -> (..., 6)"""
    psi, u, v, r = states[..., 2], states[..., 3], states[..., 4], states[..., 5]
    tau_u, tau_r = controls[..., 0], controls[..., 1]
    cos_psi, sin_psi = np.cos(psi), np.sin(psi)
    shape = np.broadcast_shapes(states.shape, controls.shape[:-1] + (STATE_DIM,))
    rates = np.empty(shape)
    rates[..., 0] = u * cos_psi - v * sin_psi
    rates[..., 1] = u * sin_psi + v * cos_psi
    rates[..., 2] = r
    rates[..., 3] = (tau_u + p.m22 * v * r - p.d11 * u) / p.m11
    rates[..., 4] = (-p.m11 * u * r - p.d22 * v) / p.m22
    rates[..., 5] = (tau_r - (p.m22 - p.m11) * u * v - p.d33 * r) / p.m33
    return rates


def _derivative_jacobians(
    states: FloatArray, p: HullParams
) -> Tuple[FloatArray, FloatArray]:
    psi, u, v, r = states[..., 2], states[..., 3], states[..., 4], states[..., 5]
    cos_psi, sin_psi = np.cos(psi), np.sin(psi)
    lead = states.shape[:-1]
    a = np.zeros(lead + (6, 6))
    a[..., 0, 2] = -u * sin_psi - v * cos_psi
    a[..., 0, 3] = cos_psi
    a[..., 0, 4] = -sin_psi
    a[..., 1, 2] = u * cos_psi - v * sin_psi
    a[..., 1, 3] = sin_psi
    a[..., 1, 4] = cos_psi
    a[..., 2, 5] = 1.0
    a[..., 3, 3] = -p.d11 / p.m11
    a[..., 3, 4] = p.m22 * r / p.m11
    a[..., 3, 5] = p.m22 * v / p.m11
    a[..., 4, 3] = -p.m11 * r / p.m22
    a[..., 4, 4] = -p.d22 / p.m22
    a[..., 4, 5] = -p.m11 * u / p.m22
    a[..., 5, 3] = -(p.m22 - p.m11) * v / p.m33
    a[..., 5, 4] = -(p.m22 - p.m11) * u / p.m33
    a[..., 5, 5] = -p.d33 / p.m33
    b = np.zeros(lead + (6, 2))
    b[..., 3, 0] = 1.0 / p.m11
    b[..., 5, 1] = 1.0 / p.m33
    return a, b


def state_derivative(
    state: VesselState, control: ControlInput, params: HullParams
) -> FloatArray:
    """(x_dot, y_dot, psi_dot, u_dot, v_dot, r_dot)"""
    return _derivative(state.as_array(), control.as_array(), params)


def state_jacobians(
    state: VesselState, params: HullParams
) -> Tuple[FloatArray, FloatArray]:
    """
    Partial derivatives of state_derivative with respect to the state (6x6)
    and the control (6x2); the model is affine in the control.
    """
    return _derivative_jacobians(state.as_array(), params)


def rk4_batch(
    states: FloatArray, controls: FloatArray, params: HullParams, dt: float
) -> FloatArray:
    """One RK4 step for every row; headings are left unwrapped"""
    k1 = _derivative(states, controls, params)
    k2 = _derivative(states + 0.5 * dt * k1, controls, params)
    k3 = _derivative(states + 0.5 * dt * k2, controls, params)
    k4 = _derivative(states + dt * k3, controls, params)
    return states + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class StepLinearization(NamedTuple):
    next_states: FloatArray  # (n, 6)
    wrt_state: FloatArray  # (n, 6, 6)
    wrt_control: FloatArray  # (n, 6, 2)


def rk4_batch_linearized(
    states: FloatArray, controls: FloatArray, params: HullParams, dt: float
) -> StepLinearization:
    """
    RK4 step together with its exact Jacobians, obtained by differentiating
    each stage through the chain rule.
    """
    n = len(states)
    eye = np.broadcast_to(np.eye(STATE_DIM), (n, STATE_DIM, STATE_DIM))

    def stage(
        points: FloatArray, dx: FloatArray, du: FloatArray
    ) -> Tuple[FloatArray, FloatArray, FloatArray]:
        rate = _derivative(points, controls, params)
        a, b = _derivative_jacobians(points, params)
        return rate, a @ dx, a @ du + b

    zero_u = np.zeros((n, STATE_DIM, 2))
    k1, k1x, k1u = stage(states, eye, zero_u)
    k2, k2x, k2u = stage(
        states + 0.5 * dt * k1, eye + 0.5 * dt * k1x, 0.5 * dt * k1u
    )
    k3, k3x, k3u = stage(
        states + 0.5 * dt * k2, eye + 0.5 * dt * k2x, 0.5 * dt * k2u
    )
    k4, k4x, k4u = stage(states + dt * k3, eye + dt * k3x, dt * k3u)

    next_states = states + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    wrt_state = eye + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    wrt_control = dt / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
    return StepLinearization(next_states, wrt_state, wrt_control)


def feedforward_controls(
    states: FloatArray, params: HullParams, dt: float
) -> FloatArray:
    """
    Controls that carry the surge speed and yaw rate of each knot exactly to
    the next one when sway is neglected, clipped to the actuator limits.
    """
    states = np.asarray(states, dtype=float)
    lower, upper = params.control_bounds()
    controls = np.empty((len(states) - 1, 2))
    for column, rate, mass, damping in (
        (0, 3, params.m11, params.d11),
        (1, 5, params.m33, params.d33),
    ):
        decay = np.exp(-damping * dt / mass)
        values = states[:, rate]
        controls[:, column] = (
            damping * (values[1:] - values[:-1] * decay) / (1.0 - decay)
        )
    return np.clip(controls, lower, upper)


def step_rk4(
    state: VesselState, control: ControlInput, params: HullParams, dt: float
) -> VesselState:
    if not dt > 0:
        raise IntegrationError(f"integration step must be positive, got {dt}")
    if not state.is_finite():
        raise IntegrationError(f"cannot integrate non-finite state {state}")
    next_state = rk4_batch(state.as_array(), control.as_array(), params, dt)
    return VesselState.from_array(next_state)


def allocate_thrusters(control: ControlInput, params: HullParams) -> ThrusterPair:
    differential = control.tau_r / params.prop_separation
    return ThrusterPair(
        t_left=(control.tau_u + differential) / 2.0,
        t_right=(control.tau_u - differential) / 2.0,
    )


def combine_thrusters(pair: ThrusterPair, params: HullParams) -> ControlInput:
    return ControlInput(
        tau_u=pair.t_left + pair.t_right,
        tau_r=(pair.t_left - pair.t_right) * params.prop_separation,
    )


def simulate(
    initial: VesselState,
    controls: Sequence[ControlInput],
    params: HullParams,
    dt: float,
) -> Trajectory:
    if not controls:
        raise IntegrationError("simulate needs at least one control input")
    states = [initial.as_array()]
    state = initial
    for control in controls:
        state = step_rk4(state, control, params, dt)
        # Keep the logged heading continuous across the wrap point
        row = state.as_array()
        row[2] = states[-1][2] + wrap_angle(row[2] - states[-1][2])
        states.append(row)
    return Trajectory.from_arrays(
        dt, np.array(states), np.array(controls, dtype=float), "executed"
    )


def hull_energy(state: VesselState, params: HullParams) -> float:
    """Kinetic energy proxy of the body-frame motion"""
    return 0.5 * (
        params.m11 * state.u**2 + params.m22 * state.v**2 + params.m33 * state.r**2
    )
