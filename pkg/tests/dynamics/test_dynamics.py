import math
from typing import Dict, List

import numpy as np
import pytest
from pytest import param as case

from usvplanner.datatypes import (
    ControlInput,
    HullParams,
    InvalidHullParams,
    ThrusterPair,
    VesselState,
)
from usvplanner.dynamics import (
    IntegrationError,
    allocate_thrusters,
    combine_thrusters,
    feedforward_controls,
    hull_energy,
    rk4_batch,
    rk4_batch_linearized,
    simulate,
    state_derivative,
    state_jacobians,
    step_rk4,
)


SAMPLE_STATE = VesselState(1.0, -2.0, 0.7, 1.2, 0.3, -0.2)
SAMPLE_CONTROL = ControlInput(40.0, -5.0)


def test_state_derivative__surge_only(hull: HullParams) -> None:
    rates = state_derivative(VesselState(u=1.0), ControlInput(), hull)

    assert rates[0] == pytest.approx(1.0)
    assert rates[1] == pytest.approx(0.0)
    assert rates[3] == pytest.approx(-77.55 / 85.28)
    assert rates[4] == pytest.approx(0.0)
    assert rates[5] == pytest.approx(0.0)


def test_state_derivative__coriolis_coupling(hull: HullParams) -> None:
    rates = state_derivative(VesselState(u=1.0, r=0.5), ControlInput(), hull)

    assert rates[2] == pytest.approx(0.5)
    assert rates[4] == pytest.approx(-85.28 * 1.0 * 0.5 / 162.5)
    assert rates[5] == pytest.approx(-45.26 * 0.5 / 41.4)


def test_state_derivative__heading_rotates_velocity(hull: HullParams) -> None:
    rates = state_derivative(
        VesselState(psi=math.pi / 2, u=2.0, v=1.0), ControlInput(), hull
    )

    assert rates[0] == pytest.approx(-1.0)
    assert rates[1] == pytest.approx(2.0)


def test_state_jacobians__match_finite_differences(hull: HullParams) -> None:
    a, b = state_jacobians(SAMPLE_STATE, hull)
    eps = 1e-6
    base = SAMPLE_STATE.as_array()
    for j in range(6):
        step = np.zeros(6)
        step[j] = eps
        forward = state_derivative(VesselState(*(base + step)), SAMPLE_CONTROL, hull)
        backward = state_derivative(VesselState(*(base - step)), SAMPLE_CONTROL, hull)
        assert a[:, j] == pytest.approx((forward - backward) / (2 * eps), abs=1e-6)
    for j in range(2):
        step = np.zeros(2)
        step[j] = eps
        forward = state_derivative(
            SAMPLE_STATE, ControlInput(*(SAMPLE_CONTROL.as_array() + step)), hull
        )
        backward = state_derivative(
            SAMPLE_STATE, ControlInput(*(SAMPLE_CONTROL.as_array() - step)), hull
        )
        assert b[:, j] == pytest.approx((forward - backward) / (2 * eps), abs=1e-6)


def test_rk4_batch_linearized__matches_finite_differences(hull: HullParams) -> None:
    states = np.array([SAMPLE_STATE.as_array(), [0, 0, -2.5, 0.5, -0.1, 0.4]])
    controls = np.array([SAMPLE_CONTROL.as_array(), [100.0, 20.0]])
    step = rk4_batch_linearized(states, controls, hull, 0.1)
    eps = 1e-6

    assert step.next_states == pytest.approx(rk4_batch(states, controls, hull, 0.1))
    for j in range(6):
        offset = np.zeros(6)
        offset[j] = eps
        numeric = (
            rk4_batch(states + offset, controls, hull, 0.1)
            - rk4_batch(states - offset, controls, hull, 0.1)
        ) / (2 * eps)
        assert step.wrt_state[:, :, j] == pytest.approx(numeric, abs=1e-6)
    for j in range(2):
        offset = np.zeros(2)
        offset[j] = eps
        numeric = (
            rk4_batch(states, controls + offset, hull, 0.1)
            - rk4_batch(states, controls - offset, hull, 0.1)
        ) / (2 * eps)
        assert step.wrt_control[:, :, j] == pytest.approx(numeric, abs=1e-6)


def test_rk4__fourth_order_convergence(hull: HullParams) -> None:
    def final_position(dt: float) -> np.ndarray:
        state = np.array([0.0, 0.0, 0.0, 0.5, 0.0, 0.0])
        for _ in range(int(round(2.0 / dt))):
            state = rk4_batch(state, np.array([150.0, 40.0]), hull, dt)
        return state

    exact = final_position(0.005)
    coarse = np.max(np.abs(final_position(0.2) - exact))
    fine = np.max(np.abs(final_position(0.1) - exact))

    # Halving the step divides the error by about 2**4
    assert coarse / fine > 10


def test_step_rk4__wraps_heading(hull: HullParams) -> None:
    state = VesselState(psi=math.pi - 0.01, r=1.0)

    result = step_rk4(state, ControlInput(), hull, 0.1)

    assert -math.pi < result.psi < 0.0


@pytest.mark.parametrize(
    "state, dt",
    [
        case(VesselState(), 0.0, id="zero_step"),
        case(VesselState(), -0.1, id="negative_step"),
        case(VesselState(u=math.nan), 0.1, id="nan_state"),
        case(VesselState(x=math.inf), 0.1, id="infinite_state"),
    ],
)
def test_step_rk4__invalid(hull: HullParams, state: VesselState, dt: float) -> None:
    with pytest.raises(IntegrationError):
        step_rk4(state, ControlInput(), hull, dt)


@pytest.mark.parametrize(
    "control, expected",
    [
        case(ControlInput(20.0, 0.0), ThrusterPair(10.0, 10.0), id="surge_only"),
        case(ControlInput(0.0, 5.0), ThrusterPair(2.5, -2.5), id="yaw_only"),
        case(ControlInput(20.0, 5.0), ThrusterPair(12.5, 7.5), id="combined"),
    ],
)
def test_allocate_thrusters(
    unit_separation_hull: HullParams, control: ControlInput, expected: ThrusterPair
) -> None:
    pair = allocate_thrusters(control, unit_separation_hull)

    assert pair == pytest.approx(expected)
    assert combine_thrusters(pair, unit_separation_hull) == pytest.approx(control)


def test_hull_energy__non_increasing_without_thrust(hull: HullParams) -> None:
    trajectory = simulate(
        VesselState(u=2.0, v=0.5, r=0.3), [ControlInput()] * 80, hull, 0.1
    )
    energies = [
        hull_energy(trajectory.state_at(i), hull) for i in range(trajectory.knot_count)
    ]

    assert np.all(np.diff(energies) <= 1e-9)
    assert energies[-1] < energies[0]


def test_simulate(hull: HullParams) -> None:
    controls: List[ControlInput] = [ControlInput(100.0, 10.0)] * 30

    trajectory = simulate(VesselState(), controls, hull, 0.1)

    assert trajectory.provenance == "executed"
    assert trajectory.knot_count == 31
    assert trajectory.duration == pytest.approx(3.0)
    assert trajectory.states[-1, 3] > 0
    assert trajectory.states[-1, 2] > 0


def test_simulate__heading_stays_continuous(hull: HullParams) -> None:
    trajectory = simulate(
        VesselState(psi=3.0, u=1.0), [ControlInput(60.0, 60.0)] * 50, hull, 0.1
    )

    assert np.all(np.abs(np.diff(trajectory.states[:, 2])) < 0.5)
    assert trajectory.states[-1, 2] > math.pi


def test_simulate__no_controls(hull: HullParams) -> None:
    with pytest.raises(IntegrationError):
        simulate(VesselState(), [], hull, 0.1)


@pytest.mark.parametrize(
    "changes",
    [
        case({"m11": 0.0}, id="zero_mass"),
        case({"d33": -1.0}, id="negative_damping"),
        case({"tau_u_max": -100.0}, id="inverted_surge_limits"),
        case({"u_max": 0.0}, id="zero_speed_limit"),
        case({"tau_r_max": math.nan}, id="nan_yaw_limit"),
    ],
)
def test_hull_params__invalid(hull: HullParams, changes: Dict[str, float]) -> None:
    with pytest.raises(InvalidHullParams):
        hull._replace(**changes).validate()


def test_hull_params__clip_control(hull: HullParams) -> None:
    clipped = hull.clip_control(ControlInput(500.0, -100.0))

    assert clipped == ControlInput(200.0, -60.0)
    assert hull.within_bounds(clipped)
    assert not hull.within_bounds(ControlInput(-81.0, 0.0))


@pytest.mark.parametrize(
    "column, rate_profile",
    [
        case(3, [0.0, 0.1, 0.25, 0.4, 0.4, 0.2], id="surge"),
        case(5, [0.0, 0.05, 0.1, 0.1, 0.0, -0.1], id="yaw_rate"),
    ],
)
def test_feedforward_controls__reach_next_knot(
    hull: HullParams, column: int, rate_profile: List[float]
) -> None:
    states = np.zeros((len(rate_profile), 6))
    states[:, column] = rate_profile

    controls = feedforward_controls(states, hull, 0.1)

    reached = rk4_batch(states[:-1], controls, hull, 0.1)
    assert controls.shape == (len(rate_profile) - 1, 2)
    assert reached[:, column] == pytest.approx(states[1:, column], abs=1e-6)


def test_feedforward_controls__clipped(hull: HullParams) -> None:
    states = np.zeros((2, 6))
    states[1, 3] = 2.0

    controls = feedforward_controls(states, hull, 0.1)

    assert controls[0] == pytest.approx([hull.tau_u_max, 0.0])
