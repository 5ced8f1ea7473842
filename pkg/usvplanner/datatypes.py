"""
Value types exchanged between the mapping, planning, optimization and
control stages
"""

from typing import Iterable, List, NamedTuple, Sequence, Tuple

import numpy as np
from typing_extensions import Final, Literal, TypedDict

from usvplanner.helper import FloatArray, wrap_angle, wrap_angles


# --------------- Vessel ------------------------------------------------------

STATE_DIM: Final = 6
CONTROL_DIM: Final = 2


class VesselState(NamedTuple):
    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0
    u: float = 0.0
    v: float = 0.0
    r: float = 0.0

    def as_array(self) -> FloatArray:
        return np.array(self, dtype=float)

    @classmethod
    def from_array(cls, values: Iterable[float]) -> "VesselState":
        x, y, psi, u, v, r = (float(value) for value in values)
        return cls(x, y, wrap_angle(psi), u, v, r)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self)))


class ControlInput(NamedTuple):
    tau_u: float = 0.0
    tau_r: float = 0.0

    def as_array(self) -> FloatArray:
        return np.array(self, dtype=float)


class ThrusterPair(NamedTuple):
    t_left: float
    t_right: float


class InvalidHullParams(ValueError):
    pass


class HullParams(NamedTuple):
    m11: float
    m22: float
    m33: float
    d11: float
    d22: float
    d33: float
    prop_separation: float
    u_max: float
    r_max: float
    tau_u_min: float
    tau_u_max: float
    tau_r_max: float

    def validate(self) -> "HullParams":
        for name in ("m11", "m22", "m33", "d11", "d22", "d33", "prop_separation"):
            if not getattr(self, name) > 0:
                raise InvalidHullParams(f"{name} must be strictly positive")
        if not (self.u_max > 0 and self.r_max > 0):
            raise InvalidHullParams("velocity bounds must be strictly positive")
        if not self.tau_u_max > self.tau_u_min:
            raise InvalidHullParams("tau_u_max must exceed tau_u_min")
        if not self.tau_r_max > 0:
            raise InvalidHullParams("tau_r_max must be strictly positive")
        if not np.all(np.isfinite(self)):
            raise InvalidHullParams("hull parameters must be finite")
        return self

    def control_bounds(self) -> Tuple[FloatArray, FloatArray]:
        return (
            np.array([self.tau_u_min, -self.tau_r_max]),
            np.array([self.tau_u_max, self.tau_r_max]),
        )

    def clip_control(self, control: ControlInput) -> ControlInput:
        lower, upper = self.control_bounds()
        tau_u, tau_r = np.clip(np.nan_to_num(control.as_array()), lower, upper)
        return ControlInput(float(tau_u), float(tau_r))

    def within_bounds(self, control: ControlInput, slack: float = 1e-9) -> bool:
        return (
            self.tau_u_min - slack <= control.tau_u <= self.tau_u_max + slack
            and abs(control.tau_r) <= self.tau_r_max + slack
        )


# --------------- Trajectories ------------------------------------------------

Provenance = Literal["initial", "optimized", "executed"]


class InvalidTrajectory(ValueError):
    pass


class Trajectory(NamedTuple):
    """
    Knots at a fixed step: states has one row per knot, controls one row per
    interval (the control held from knot i to knot i+1). Headings are kept
    continuous (unwrapped) inside the arrays; state_at wraps them.
    """

    dt: float
    states: FloatArray
    controls: FloatArray
    provenance: Provenance

    @classmethod
    def from_arrays(
        cls,
        dt: float,
        states: FloatArray,
        controls: FloatArray,
        provenance: Provenance,
    ) -> "Trajectory":
        states = np.array(states, dtype=float).reshape(-1, STATE_DIM)
        controls = np.array(controls, dtype=float).reshape(-1, CONTROL_DIM)
        if not dt > 0:
            raise InvalidTrajectory("dt must be positive")
        if len(states) < 2:
            raise InvalidTrajectory("a trajectory needs at least two knots")
        if len(controls) != len(states) - 1:
            raise InvalidTrajectory(
                f"{len(states)} knots need {len(states) - 1} controls,"
                f" got {len(controls)}"
            )
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(controls))):
            raise InvalidTrajectory("trajectory contains non-finite values")
        return cls(float(dt), states, controls, provenance)

    @property
    def knot_count(self) -> int:
        return len(self.states)

    @property
    def times(self) -> FloatArray:
        return np.arange(self.knot_count) * self.dt

    @property
    def duration(self) -> float:
        return (self.knot_count - 1) * self.dt

    @property
    def positions(self) -> FloatArray:
        return self.states[:, :2]

    def state_at(self, index: int) -> VesselState:
        return VesselState.from_array(self.states[index])

    def control_at(self, index: int) -> ControlInput:
        tau_u, tau_r = self.controls[min(index, len(self.controls) - 1)]
        return ControlInput(float(tau_u), float(tau_r))

    def wrapped_states(self) -> FloatArray:
        states = self.states.copy()
        states[:, 2] = wrap_angles(states[:, 2])
        return states

    def with_provenance(self, provenance: Provenance) -> "Trajectory":
        return self._replace(provenance=provenance)


# --------------- Search ------------------------------------------------------

Direction = Literal["forward", "reverse"]


class SearchPose(NamedTuple):
    x: float
    y: float
    psi: float
    direction: Direction = "forward"

    @property
    def sign(self) -> float:
        return 1.0 if self.direction == "forward" else -1.0


class PlannedPath(NamedTuple):
    poses: List[SearchPose]
    length: float

    def as_array(self) -> FloatArray:
        """Rows of (x, y, psi, direction sign)"""
        return np.array([(p.x, p.y, p.psi, p.sign) for p in self.poses], dtype=float)

    @property
    def positions(self) -> FloatArray:
        return self.as_array()[:, :2]

    def arc_lengths(self) -> FloatArray:
        positions = self.positions
        steps = np.hypot(*np.diff(positions, axis=0).T) if len(positions) > 1 else []
        return np.concatenate([[0.0], np.cumsum(steps)])


# --------------- Occupancy ---------------------------------------------------

FREE: Final = 0
OCCUPIED: Final = 1
UNKNOWN: Final = -1

CELL_SYMBOLS: Final = {FREE: "0", OCCUPIED: "1", UNKNOWN: "?"}


class GridSpec(NamedTuple):
    origin_x: float
    origin_y: float
    resolution: float
    ncols: int
    nrows: int


class OccupancyGrid(NamedTuple):
    """
    Row index grows with world y, column index with world x; cell (0, 0) has
    its lower-left corner at the origin.
    """

    origin_x: float
    origin_y: float
    resolution: float
    cells: "np.ndarray[Tuple[int, int], np.dtype[np.int8]]"

    @classmethod
    def filled(cls, spec: GridSpec, state: int = FREE) -> "OccupancyGrid":
        if not spec.resolution > 0:
            raise ValueError("grid resolution must be positive")
        if spec.ncols <= 0 or spec.nrows <= 0:
            raise ValueError("grid must have at least one cell")
        cells = np.full((spec.nrows, spec.ncols), state, dtype=np.int8)
        return cls(spec.origin_x, spec.origin_y, spec.resolution, cells)

    @property
    def nrows(self) -> int:
        return int(self.cells.shape[0])

    @property
    def ncols(self) -> int:
        return int(self.cells.shape[1])

    @property
    def width(self) -> float:
        return self.ncols * self.resolution

    @property
    def height(self) -> float:
        return self.nrows * self.resolution

    @property
    def spec(self) -> GridSpec:
        return GridSpec(
            self.origin_x, self.origin_y, self.resolution, self.ncols, self.nrows
        )

    def with_cells(self, cells: np.ndarray) -> "OccupancyGrid":
        return self._replace(cells=cells.astype(np.int8))

    def cell_of(self, x: float, y: float) -> Tuple[int, int]:
        col = int(np.floor((x - self.origin_x) / self.resolution))
        row = int(np.floor((y - self.origin_y) / self.resolution))
        return row, col

    def cell_center(self, row: int, col: int) -> Tuple[float, float]:
        return (
            self.origin_x + (col + 0.5) * self.resolution,
            self.origin_y + (row + 0.5) * self.resolution,
        )

    def contains(self, x: float, y: float) -> bool:
        return (
            self.origin_x <= x < self.origin_x + self.width
            and self.origin_y <= y < self.origin_y + self.height
        )

    def blocked(self, unknown_as_occupied: bool = True) -> np.ndarray:
        if unknown_as_occupied:
            return self.cells != FREE
        return self.cells == OCCUPIED

    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.cells == OCCUPIED))


# --------------- Costs and metrics ------------------------------------------


class CostWeights(NamedTuple):
    w_x: Tuple[float, ...]
    w_tau: Tuple[float, ...]
    w_u: Tuple[float, ...]

    def validate(self) -> "CostWeights":
        if len(self.w_x) != STATE_DIM or len(self.w_tau) != CONTROL_DIM:
            raise ValueError("w_x needs 6 entries and w_tau 2 entries")
        if len(self.w_u) != CONTROL_DIM:
            raise ValueError("w_u needs 2 entries")
        if min(self.w_x + self.w_tau + self.w_u) < 0:
            raise ValueError("cost weights must be non-negative")
        if max(self.w_x) <= 0:
            raise ValueError("at least one state weight must be positive")
        return self

    def scaled(self, factor: float) -> "CostWeights":
        return CostWeights(
            tuple(factor * w for w in self.w_x),
            tuple(factor * w for w in self.w_tau),
            tuple(factor * w for w in self.w_u),
        )


class Metrics(TypedDict):
    length: float
    rmse: float
    max_error: float
    mean_speed: float
    duration: float


def stack_states(states: Sequence[VesselState]) -> FloatArray:
    return np.array(states, dtype=float).reshape(-1, STATE_DIM)
