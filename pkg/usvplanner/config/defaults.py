"""
Default values for every tunable of the pipeline, in SI units
"""

from typing import Dict, Tuple

from typing_extensions import Final


# --------------- Hull --------------------------------------------------------

# Otter-class catamaran, 2.0 m x 1.08 m, 65 kg dry mass
# fmt: off
DEFAULT_HULL_PARAMETERS: Final[Dict[str, float]] = {
    "m11": 85.28,
    "m22": 162.5,
    "m33": 41.4,
    "d11": 77.55,
    "d22": 162.5,
    "d33": 45.26,
    "prop_separation": 0.395,
    "u_max": 3.0,
    "r_max": 1.0,
    "tau_u_min": -80.0,
    "tau_u_max": 200.0,
    "tau_r_max": 60.0,
}
# fmt: on
assert all(
    DEFAULT_HULL_PARAMETERS[key] > 0
    for key in ("m11", "m22", "m33", "d11", "d22", "d33", "prop_separation")
)
assert DEFAULT_HULL_PARAMETERS["tau_u_max"] > DEFAULT_HULL_PARAMETERS["tau_u_min"]

HULL_FOOTPRINT: Final = (2.0, 1.08)  # length, width (m)

INTEGRATION_DT: Final = 0.1

# --------------- Mapping -----------------------------------------------------

MASK_THRESHOLD: Final = 128
GRID_RESOLUTION: Final = 0.5
INFLATION_RADIUS: Final = 1.0
UNKNOWN_AS_OCCUPIED: Final = True
GRAZING_TOLERANCE: Final = 1e-9

# --------------- Search ------------------------------------------------------

MIN_TURN_RADIUS: Final = 3.0
PRIMITIVE_ARC_LENGTH: Final = 1.0
PATH_SAMPLE_STEP: Final = 0.25
HEADING_BINS: Final = 36
REACH_THRESHOLD: Final = 3.0
REVERSE_PENALTY: Final = 2.0
SWITCH_PENALTY: Final = 1.0
CURVATURE_PENALTY: Final = 0.1
MAX_EXPANSIONS: Final = 150_000
# Beyond this distance the grid distance field dominates the analytic term
ANALYTIC_HEURISTIC_RADIUS: Final = 15.0
assert PATH_SAMPLE_STEP <= PRIMITIVE_ARC_LENGTH

# --------------- Solver ------------------------------------------------------

SOLVER_MAX_OUTER_ITERS: Final = 12
SOLVER_MAX_INNER_ITERS: Final = 400
SOLVER_CONSTRAINT_TOL: Final = 1e-4
SOLVER_GRAD_TOL: Final = 1e-5
SOLVER_INITIAL_PENALTY: Final = 10.0
SOLVER_PENALTY_GROWTH: Final = 10.0
# Problems with Gauss-Newton curvature start stiffer and need few inner steps
NEWTON_INITIAL_PENALTY: Final = 1e3
NEWTON_DENSE_DIM: Final = 600

# --------------- Trajectory optimization ------------------------------------

Weights = Tuple[float, ...]

# fmt: off
OPTIMIZER_W_X: Final[Weights] = (1.0, 1.0, 0.5, 0.1, 0.1, 0.1)
OPTIMIZER_W_TAU: Final[Weights] = (1e-3, 1e-3)
OPTIMIZER_W_U: Final[Weights] = (1e-2, 1e-2)
# fmt: on
OBSTACLE_WEIGHT: Final = 100.0
OBSTACLE_MARGIN: Final = 1.0
DEFECT_TOL: Final = 1e-3
WINDOW_KNOTS: Final = 400
WINDOW_OVERLAP: Final = 50
OPTIMIZER_MAX_OUTER_ITERS: Final = 15
OPTIMIZER_MAX_INNER_ITERS: Final = 50
CRUISE_SPEED: Final = 1.6
assert all(w >= 0 for w in OPTIMIZER_W_X + OPTIMIZER_W_TAU + OPTIMIZER_W_U)
assert WINDOW_OVERLAP < WINDOW_KNOTS

# --------------- Tracking ----------------------------------------------------

NMPC_HORIZON: Final = 20
NMPC_DT: Final = 0.1
# fmt: off
NMPC_W_X: Final[Weights] = (10.0, 10.0, 2.0, 0.5, 0.1, 0.5)
NMPC_W_TAU: Final[Weights] = (1e-3, 1e-3)
NMPC_W_U: Final[Weights] = (1e-2, 1e-2)
# fmt: on
NMPC_MAX_OUTER_ITERS: Final = 8
NMPC_MAX_INNER_ITERS: Final = 20
NMPC_GRAD_TOL: Final = 1e-4
assert all(w >= 0 for w in NMPC_W_X + NMPC_W_TAU + NMPC_W_U)

# Frozen from tools/tune_pid.py on the s-curve scenario
PID_HEADING_GAINS: Final = (40.0, 2.0, 20.0)
PID_SPEED_GAINS: Final = (150.0, 60.0, 0.0)
PID_LOOKAHEAD: Final = 3.0
PID_HEADING_INTEGRAL_CLAMP: Final = 0.5
PID_SPEED_INTEGRAL_CLAMP: Final = 5.0
assert all(gain >= 0 for gain in PID_HEADING_GAINS + PID_SPEED_GAINS)

# --------------- Harness -----------------------------------------------------

SENSING_RADIUS: Final = 20.0
FULL_SIZE_EXTENT: Final = (200.0, 100.0)
# Extra simulated time after the reference ends, to let the vessel settle
TRACKING_SETTLE_TIME: Final = 2.0
# Knots optimized ahead of the vessel by the limited-perception variant
LOCAL_WINDOW_KNOTS: Final = 80
MAX_REPLANS: Final = 25
RANDOM_BLOCK_SIZE: Final = 4.0
# Randomly placed blocks keep this distance from the start and the goal
RANDOM_BLOCK_CLEARANCE: Final = 6.0
assert LOCAL_WINDOW_KNOTS >= 2

# --------------- Exit codes --------------------------------------------------

EXIT_OK: Final = 0
EXIT_CRASH: Final = 1
EXIT_PARSE_FAILURE: Final = 2
EXIT_PLANNING_FAILURE: Final = 3
EXIT_SOLVER_FAILURE: Final = 4
EXIT_COLLISION: Final = 5
assert (
    len(
        {
            EXIT_OK,
            EXIT_CRASH,
            EXIT_PARSE_FAILURE,
            EXIT_PLANNING_FAILURE,
            EXIT_SOLVER_FAILURE,
            EXIT_COLLISION,
        }
    )
    == 6
)
