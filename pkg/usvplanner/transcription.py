"""
Direct multiple shooting shared by the trajectory optimizer and the NMPC:
packing of knots and controls into one decision vector, RK4 dynamics defects
with their Jacobian action, box bounds and quadratic cost terms.
"""

from typing import Callable, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from usvplanner.datatypes import CONTROL_DIM, STATE_DIM, HullParams
from usvplanner.dynamics import rk4_batch_linearized
from usvplanner.helper import FloatArray, wrap_angles


PSI = 2

Shape = Tuple[int, ...]


class CostTerms(NamedTuple):
    value: float
    wrt_states: FloatArray
    wrt_controls: FloatArray

    def plus(self, other: "CostTerms") -> "CostTerms":
        return CostTerms(
            self.value + other.value,
            self.wrt_states + other.wrt_states,
            self.wrt_controls + other.wrt_controls,
        )


class ShootingLayout:
    """
    Knots 0..N and controls 0..N-1. The first knot is always pinned; the last
    one is pinned only when a terminal state is given. Free knots come first
    in the decision vector, followed by all controls.
    """

    def __init__(
        self,
        knots: int,
        first: FloatArray,
        last: Optional[FloatArray] = None,
    ) -> None:
        if knots < 2:
            raise ValueError("a shooting layout needs at least two knots")
        self.knots = knots
        self.intervals = knots - 1
        self.first = np.asarray(first, dtype=float)
        self.last = None if last is None else np.asarray(last, dtype=float)
        stop = knots - 1 if self.last is not None else knots
        self.free = np.arange(1, stop)
        self.state_size = len(self.free) * STATE_DIM
        self.dim = self.state_size + self.intervals * CONTROL_DIM
        # Position of every decision variable in the full (states, controls) vector
        self.columns = np.concatenate(
            [
                (self.free[:, None] * STATE_DIM + np.arange(STATE_DIM)).ravel(),
                knots * STATE_DIM + np.arange(self.intervals * CONTROL_DIM),
            ]
        )
        self.full_size = knots * STATE_DIM + self.intervals * CONTROL_DIM

    def unpack(self, z: FloatArray) -> Tuple[FloatArray, FloatArray]:
        states = np.empty((self.knots, STATE_DIM))
        states[0] = self.first
        if self.last is not None:
            states[-1] = self.last
        states[self.free] = z[: self.state_size].reshape(-1, STATE_DIM)
        controls = z[self.state_size :].reshape(self.intervals, CONTROL_DIM)
        return states, controls

    def pack(self, states: FloatArray, controls: FloatArray) -> FloatArray:
        return np.concatenate([states[self.free].ravel(), np.ravel(controls)])

    def pack_gradient(
        self, wrt_states: FloatArray, wrt_controls: FloatArray
    ) -> FloatArray:
        # Pinned knots are constants; their gradient rows are dropped
        return self.pack(wrt_states, wrt_controls)

    def bounds(self, params: HullParams) -> Tuple[FloatArray, FloatArray]:
        state_lower = np.full(STATE_DIM, -np.inf)
        state_upper = np.full(STATE_DIM, np.inf)
        state_lower[3], state_upper[3] = -params.u_max, params.u_max
        state_lower[5], state_upper[5] = -params.r_max, params.r_max
        control_lower, control_upper = params.control_bounds()
        lower = self.pack(
            np.tile(state_lower, (self.knots, 1)),
            np.tile(control_lower, (self.intervals, 1)),
        )
        upper = self.pack(
            np.tile(state_upper, (self.knots, 1)),
            np.tile(control_upper, (self.intervals, 1)),
        )
        return lower, upper

    def defects(
        self, z: FloatArray, params: HullParams, dt: float
    ) -> Tuple[FloatArray, Callable[[FloatArray], FloatArray]]:
        """
        Residuals X[i+1] - RK4(X[i], tau[i]) for every interval, and the
        product of the transposed residual Jacobian with a weight vector.
        """
        states, controls = self.unpack(z)
        step = rk4_batch_linearized(states[:-1], controls, params, dt)
        residual = (states[1:] - step.next_states).ravel()

        def jacobian_t(weights: FloatArray) -> FloatArray:
            w = weights.reshape(self.intervals, STATE_DIM)
            wrt_states = np.zeros((self.knots, STATE_DIM))
            wrt_states[1:] += w
            wrt_states[:-1] -= np.einsum("nij,ni->nj", step.wrt_state, w)
            wrt_controls = -np.einsum("nij,ni->nj", step.wrt_control, w)
            return self.pack_gradient(wrt_states, wrt_controls)

        return residual, jacobian_t

    def restrict(self, matrix: sparse.spmatrix) -> sparse.csc_matrix:
        """Columns (and, for square matrices, rows) of the decision variables"""
        matrix = sparse.csr_matrix(matrix)
        if matrix.shape[0] == self.full_size:
            matrix = matrix[self.columns]
        return sparse.csc_matrix(matrix[:, self.columns])

    def defect_jacobian(
        self, z: FloatArray, params: HullParams, dt: float
    ) -> sparse.csc_matrix:
        """Sparse Jacobian of the defects with respect to the decision vector"""
        states, controls = self.unpack(z)
        step = rk4_batch_linearized(states[:-1], controls, params, dt)
        n = self.intervals
        rows = np.arange(n * STATE_DIM).reshape(n, STATE_DIM)
        state_cols = np.arange(self.knots * STATE_DIM).reshape(-1, STATE_DIM)
        control_cols = self.knots * STATE_DIM + np.arange(n * CONTROL_DIM).reshape(
            n, CONTROL_DIM
        )
        row_parts = [
            rows.ravel(),
            np.repeat(rows, STATE_DIM, axis=1).ravel(),
            np.repeat(rows, CONTROL_DIM, axis=1).ravel(),
        ]
        col_parts = [
            state_cols[1:].ravel(),
            np.tile(state_cols[:-1], STATE_DIM).ravel(),
            np.tile(control_cols, STATE_DIM).ravel(),
        ]
        data_parts = [
            np.ones(n * STATE_DIM),
            -step.wrt_state.ravel(),
            -step.wrt_control.ravel(),
        ]
        full = sparse.coo_matrix(
            (
                np.concatenate(data_parts),
                (np.concatenate(row_parts), np.concatenate(col_parts)),
            ),
            shape=(n * STATE_DIM, self.full_size),
        )
        return self.restrict(full)

    def quadratic_curvature(
        self,
        w_x: Sequence[float],
        w_tau: Sequence[float],
        w_u: Sequence[float],
        with_previous: bool = False,
    ) -> sparse.csc_matrix:
        """
        Exact Hessian of the tracking, control and smoothness terms, which
        does not depend on the decision vector.
        """
        n = self.intervals
        change_weights = sparse.diags(np.asarray(w_u, dtype=float))
        if n > 1:
            difference = sparse.diags(
                [-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n)
            )
            smoothing = sparse.kron(difference.T @ difference, change_weights)
        else:
            smoothing = sparse.csr_matrix((CONTROL_DIM, CONTROL_DIM))
        if with_previous:
            first = np.zeros(n)
            first[0] = 1.0
            smoothing = smoothing + sparse.kron(sparse.diags(first), change_weights)
        full = sparse.block_diag(
            [
                sparse.kron(sparse.identity(self.knots), sparse.diags(np.asarray(w_x))),
                sparse.kron(sparse.identity(n), sparse.diags(np.asarray(w_tau)))
                + smoothing,
            ]
        )
        return self.restrict(full)

    def position_curvature(self, blocks: FloatArray) -> sparse.csc_matrix:
        """Block-diagonal curvature from a (knots, 2, 2) array over x, y"""
        index = np.arange(self.knots)[:, None] * STATE_DIM + np.arange(2)
        rows = np.repeat(index, 2, axis=1).ravel()
        cols = np.tile(index, 2).ravel()
        full = sparse.coo_matrix(
            (np.asarray(blocks, dtype=float).ravel(), (rows, cols)),
            shape=(self.full_size, self.full_size),
        )
        return self.restrict(full)


def state_error(states: FloatArray, reference: FloatArray) -> FloatArray:
    """Difference with the heading component taken the short way round"""
    error = states - reference
    error[..., PSI] = wrap_angles(error[..., PSI])
    return error


def tracking_cost(
    states: FloatArray, reference: FloatArray, w_x: FloatArray, controls_shape: Shape
) -> CostTerms:
    error = state_error(states, reference)
    weighted = error * np.asarray(w_x)
    return CostTerms(
        0.5 * float(np.sum(weighted * error)), weighted, np.zeros(controls_shape)
    )


def control_cost(
    controls: FloatArray,
    w_tau: FloatArray,
    states_shape: Shape,
    reference: Optional[FloatArray] = None,
) -> CostTerms:
    error = controls if reference is None else controls - reference
    weighted = error * np.asarray(w_tau)
    return CostTerms(
        0.5 * float(np.sum(weighted * error)), np.zeros(states_shape), weighted
    )


def smoothness_cost(
    controls: FloatArray,
    w_u: FloatArray,
    states_shape: Shape,
    previous: Optional[FloatArray] = None,
) -> CostTerms:
    """
    Half the weighted squared change between consecutive controls; with
    `previous` the change into the first control counts as well.
    """
    sequence = controls if previous is None else np.vstack([previous, controls])
    change = np.diff(sequence, axis=0) * np.asarray(w_u)
    value = 0.5 * float(np.sum(change * np.diff(sequence, axis=0)))
    gradient = np.zeros_like(sequence)
    gradient[1:] += change
    gradient[:-1] -= change
    if previous is not None:
        gradient = gradient[1:]
    return CostTerms(value, np.zeros(states_shape), gradient)
