"""
Scenario loading and the pipeline variants compared by the ablation runner
"""

import configparser
import logging
import math
from contextlib import contextmanager
from enum import Enum
from pathlib import Path
from typing import (
    Dict,
    Iterator,
    List,
    NamedTuple,
    Optional,
    Sequence,
    Set,
    Tuple,
    Union,
)

import numpy as np
import pandas as pd
from typing_extensions import Final, Literal, TypedDict

from usvplanner.config import HULL_FILES
from usvplanner.config.defaults import (
    CRUISE_SPEED,
    FULL_SIZE_EXTENT,
    GRID_RESOLUTION,
    HULL_FOOTPRINT,
    INFLATION_RADIUS,
    LOCAL_WINDOW_KNOTS,
    MAX_REPLANS,
    NMPC_HORIZON,
    NMPC_W_TAU,
    NMPC_W_U,
    NMPC_W_X,
    OPTIMIZER_W_TAU,
    OPTIMIZER_W_U,
    OPTIMIZER_W_X,
    PID_HEADING_GAINS,
    PID_LOOKAHEAD,
    PID_SPEED_GAINS,
    RANDOM_BLOCK_CLEARANCE,
    RANDOM_BLOCK_SIZE,
    SENSING_RADIUS,
)
from usvplanner.control import (
    NmpcConfig,
    PidConfig,
    TrackingAborted,
    TrackingLog,
    run_tracking,
)
from usvplanner.datatypes import (
    FREE,
    OCCUPIED,
    CostWeights,
    GridSpec,
    HullParams,
    InvalidTrajectory,
    OccupancyGrid,
    PlannedPath,
    SearchPose,
    Trajectory,
    VesselState,
)
from usvplanner.dynamics import DEFAULT_HULL, IntegrationError, feedforward_controls
from usvplanner.fileio import (
    PathLike,
    hull_from_mapping,
    read_camera,
    read_hull,
    read_ini,
    read_pgm,
    write_path,
    write_trajectory,
)
from usvplanner.grid import (
    CircleObstacle,
    Obstacle,
    RectObstacle,
    cell_centers,
    inflate,
    rasterize,
)
from usvplanner.helper import (
    FloatArray,
    map_in_threads,
    polyline_length,
    stopwatch,
    wrap_angle,
)
from usvplanner.mapping import MappingError, mask_to_grid
from usvplanner.optimizer import (
    OptimizationResult,
    OptimizerOptions,
    TrajectoryCollision,
    TrajectoryError,
    build_reference,
    solve_trajectory,
    trajectory_metrics,
)
from usvplanner.planning.hybrid_astar import (
    FootprintChecker,
    PlanningError,
    SearchOptions,
    search,
)
from usvplanner.render import Overlay, render_svg


logger = logging.getLogger(__name__)

Stage = Literal["plan", "optimize", "track", "safety"]
ControllerName = Literal["nmpc", "pid"]


class ConfigSource(Enum):
    DEFAULT = "from default config"
    SCENARIO = "in scenario file"
    COMMANDLINE = "on command line"


class SettingData(NamedTuple):
    value: str
    source: ConfigSource


class ScenarioError(ValueError):
    def __init__(self, section: str, key: str, detail: str) -> None:
        where = f"[{section}] {key}" if key else f"[{section}]"
        super().__init__(f"{where}: {detail}")
        self.section = section
        self.key = key


class StageFailure(Exception):
    """A pipeline stage failed; wraps the underlying error"""

    def __init__(self, stage: Stage, error: Exception) -> None:
        super().__init__(f"{stage} stage failed: {error}")
        self.stage = stage
        self.error = error


@contextmanager
def _stage(name: Stage) -> Iterator[None]:
    try:
        yield
    except (
        PlanningError,
        TrajectoryError,
        TrackingAborted,
        IntegrationError,
        InvalidTrajectory,
    ) as error:
        raise StageFailure(name, error) from error


# --------------- Scenarios --------------------------------------------------


class Scenario(NamedTuple):
    name: str
    seed: int
    grid: OccupancyGrid
    planning_grid: OccupancyGrid
    start: SearchPose
    start_speed: float
    goal: SearchPose
    hull: HullParams
    weights: CostWeights
    cruise_speed: float
    sensing_radius: float
    inflation: float
    nmpc: NmpcConfig
    pid: PidConfig
    unknown_as_occupied: bool
    obstacle_count: int
    settings: Dict[str, SettingData]

    @property
    def extent(self) -> Tuple[float, float]:
        return self.grid.width, self.grid.height

    @property
    def start_state(self) -> VesselState:
        return VesselState(self.start.x, self.start.y, self.start.psi, self.start_speed)

    def with_setting(self, key: str, value: object) -> "Scenario":
        settings = dict(self.settings)
        settings[key] = SettingData(str(value), ConfigSource.COMMANDLINE)
        return self._replace(settings=settings)


SECTION_KEYS: Final[Dict[str, Set[str]]] = {
    "scenario": {"name", "seed"},
    "map": {
        "width",
        "height",
        "resolution",
        "inflation",
        "unknown",
        "random_blocks",
        "block_size",
        "mask",
        "camera",
        "origin_x",
        "origin_y",
    },
    "start": {"x", "y", "psi", "speed"},
    "goal": {"x", "y", "psi"},
    "hull": set(HullParams._fields) | {"file"},
    "weights": {"w_x", "w_tau", "w_u"},
    "controller": {
        "cruise_speed",
        "sensing_radius",
        "nmpc_horizon",
        "nmpc_w_x",
        "nmpc_w_tau",
        "nmpc_w_u",
        "pid_heading",
        "pid_speed",
        "pid_lookahead",
    },
}
NUMBERED_MAP_KEYS: Final = ("rect.", "circle.")


class _ScenarioReader:
    """Typed access to a scenario file that remembers where each value came from"""

    def __init__(self, parser: configparser.ConfigParser) -> None:
        self.parser = parser
        self.settings: Dict[str, SettingData] = {}

    def check_keys(self) -> None:
        for section in self.parser.sections():
            if section not in SECTION_KEYS:
                raise ScenarioError(section, "", "unknown section")
            for key in self.parser[section]:
                numbered = section == "map" and key.startswith(NUMBERED_MAP_KEYS)
                if key not in SECTION_KEYS[section] and not numbered:
                    raise ScenarioError(section, key, "unknown key")

    def _raw(self, section: str, key: str) -> Optional[str]:
        if not self.parser.has_section(section):
            return None
        return self.parser[section].get(key)

    def note(self, section: str, key: str, value: object, given: bool) -> None:
        source = ConfigSource.SCENARIO if given else ConfigSource.DEFAULT
        self.settings[f"{section}.{key}"] = SettingData(str(value), source)

    def numbers(
        self,
        section: str,
        key: str,
        count: int,
        default: Optional[Sequence[float]] = None,
    ) -> Tuple[float, ...]:
        raw = self._raw(section, key)
        if raw is None:
            if default is None:
                raise ScenarioError(section, key, "is required")
            self.note(section, key, ", ".join(map(str, default)), False)
            return tuple(float(value) for value in default)
        try:
            values = tuple(float(part) for part in raw.split(","))
        except ValueError as error:
            detail = f"must be numeric, got {raw!r}"
            raise ScenarioError(section, key, detail) from error
        if len(values) != count:
            detail = f"needs {count} values, got {len(values)}"
            raise ScenarioError(section, key, detail)
        if not all(math.isfinite(value) for value in values):
            raise ScenarioError(section, key, "must be finite")
        self.note(section, key, raw, True)
        return values

    def number(
        self, section: str, key: str, default: Optional[float] = None
    ) -> float:
        values = self.numbers(
            section, key, 1, None if default is None else (default,)
        )
        return values[0]

    def integer(self, section: str, key: str, default: int) -> int:
        value = self.number(section, key, default)
        if value != int(value):
            raise ScenarioError(section, key, f"must be an integer, got {value}")
        return int(value)

    def text(self, section: str, key: str, default: Optional[str] = None) -> str:
        raw = self._raw(section, key)
        if raw is None:
            if default is None:
                raise ScenarioError(section, key, "is required")
            self.note(section, key, default, False)
            return default
        self.note(section, key, raw, True)
        return raw.strip()

    def has(self, section: str, key: str) -> bool:
        return self._raw(section, key) is not None

    def numbered(self, section: str, prefix: str) -> List[Tuple[str, str]]:
        if not self.parser.has_section(section):
            return []
        return sorted(
            (key, value)
            for key, value in self.parser[section].items()
            if key.startswith(prefix)
        )


def _primitives(reader: _ScenarioReader) -> List[Obstacle]:
    obstacles: List[Obstacle] = []
    for key, _ in reader.numbered("map", "rect."):
        xmin, ymin, xmax, ymax = reader.numbers("map", key, 4)
        if not (xmax > xmin and ymax > ymin):
            raise ScenarioError("map", key, "rectangle needs xmax > xmin, ymax > ymin")
        obstacles.append(RectObstacle(xmin, ymin, xmax, ymax))
    for key, _ in reader.numbered("map", "circle."):
        cx, cy, radius = reader.numbers("map", key, 3)
        if not radius > 0:
            raise ScenarioError("map", key, "circle radius must be positive")
        obstacles.append(CircleObstacle(cx, cy, radius))
    return obstacles


def _random_blocks(
    count: int,
    size: float,
    extent: Tuple[float, float],
    keep_clear: Sequence[Tuple[float, float]],
    seed: int,
) -> List[Obstacle]:
    rng = np.random.default_rng(seed)
    width, height = extent
    blocks: List[Obstacle] = []
    attempts = 0
    while len(blocks) < count and attempts < 100 * count:
        attempts += 1
        x, y = rng.uniform((0.0, 0.0), (width - size, height - size))
        centre = (x + 0.5 * size, y + 0.5 * size)
        reach = RANDOM_BLOCK_CLEARANCE + size / math.sqrt(2)
        if any(math.dist(centre, point) < reach for point in keep_clear):
            continue
        blocks.append(RectObstacle(x, y, x + size, y + size))
    if len(blocks) < count:
        logger.warning("Placed %d of %d random blocks", len(blocks), count)
    return blocks


def _scaled(obstacle: Obstacle, sx: float, sy: float) -> Obstacle:
    if isinstance(obstacle, RectObstacle):
        return RectObstacle(
            obstacle.xmin * sx,
            obstacle.ymin * sy,
            obstacle.xmax * sx,
            obstacle.ymax * sy,
        )
    radius = obstacle.radius * min(sx, sy)
    return CircleObstacle(obstacle.cx * sx, obstacle.cy * sy, radius)


def _pose(reader: _ScenarioReader, section: str, sx: float, sy: float) -> SearchPose:
    return SearchPose(
        reader.number(section, "x") * sx,
        reader.number(section, "y") * sy,
        wrap_angle(reader.number(section, "psi", 0.0)),
    )


def _hull(reader: _ScenarioReader, path: Path) -> HullParams:
    if not reader.parser.has_section("hull"):
        return DEFAULT_HULL
    values = dict(reader.parser["hull"])
    base = DEFAULT_HULL
    if "file" in values:
        name = values["file"].strip()
        hull_file = HULL_FILES.get(name, path.parent / name)
        base = read_hull(hull_file)
        reader.note("hull", "file", name, True)
    return hull_from_mapping(path, values, base)


def _controllers(
    reader: _ScenarioReader, hull: HullParams
) -> Tuple[float, float, NmpcConfig, PidConfig]:
    cruise_speed = reader.number("controller", "cruise_speed", CRUISE_SPEED)
    if not 0 < cruise_speed <= hull.u_max:
        raise ScenarioError(
            "controller", "cruise_speed", f"must lie in (0, {hull.u_max}]"
        )
    sensing_radius = reader.number("controller", "sensing_radius", SENSING_RADIUS)
    if not sensing_radius > 0:
        raise ScenarioError("controller", "sensing_radius", "must be positive")
    try:
        nmpc = NmpcConfig(
            horizon=reader.integer("controller", "nmpc_horizon", NMPC_HORIZON),
            weights=CostWeights(
                reader.numbers("controller", "nmpc_w_x", 6, NMPC_W_X),
                reader.numbers("controller", "nmpc_w_tau", 2, NMPC_W_TAU),
                reader.numbers("controller", "nmpc_w_u", 2, NMPC_W_U),
            ),
        ).validate()
        heading = reader.numbers("controller", "pid_heading", 3, PID_HEADING_GAINS)
        speed = reader.numbers("controller", "pid_speed", 3, PID_SPEED_GAINS)
        pid = PidConfig(
            heading_gains=(heading[0], heading[1], heading[2]),
            speed_gains=(speed[0], speed[1], speed[2]),
            lookahead=reader.number("controller", "pid_lookahead", PID_LOOKAHEAD),
        ).validate()
    except ScenarioError:
        raise
    except ValueError as error:
        raise ScenarioError("controller", "", str(error)) from error
    return cruise_speed, sensing_radius, nmpc, pid


def _weights(reader: _ScenarioReader) -> CostWeights:
    try:
        return CostWeights(
            reader.numbers("weights", "w_x", 6, OPTIMIZER_W_X),
            reader.numbers("weights", "w_tau", 2, OPTIMIZER_W_TAU),
            reader.numbers("weights", "w_u", 2, OPTIMIZER_W_U),
        ).validate()
    except ScenarioError:
        raise
    except ValueError as error:
        raise ScenarioError("weights", "", str(error)) from error


def load_scenario(
    path: PathLike, full_size: bool = False, seed: Optional[int] = None
) -> Scenario:
    """
    Parse and validate a scenario file. With full_size the map, obstacles
    and endpoints are stretched onto the full-size field; seed overrides
    the file's seed.
    """
    path = Path(path)
    reader = _ScenarioReader(read_ini(path, "scenario"))
    reader.check_keys()

    name = reader.text("scenario", "name", path.stem)
    file_seed = reader.integer("scenario", "seed", 0)
    width = reader.number("map", "width")
    height = reader.number("map", "height")
    resolution = reader.number("map", "resolution", GRID_RESOLUTION)
    inflation = reader.number("map", "inflation", INFLATION_RADIUS)
    if not (width > 0 and height > 0):
        raise ScenarioError("map", "width", "map extent must be positive")
    if not resolution > 0:
        raise ScenarioError("map", "resolution", "must be positive")
    if inflation < 0:
        raise ScenarioError("map", "inflation", "must be non-negative")
    unknown = reader.text("map", "unknown", "occupied")
    if unknown not in ("occupied", "free"):
        raise ScenarioError("map", "unknown", "must be 'occupied' or 'free'")
    unknown_as_occupied = unknown == "occupied"

    sx, sy = 1.0, 1.0
    if full_size:
        if reader.has("map", "mask"):
            raise ScenarioError("map", "mask", "mask maps cannot be rescaled")
        sx, sy = FULL_SIZE_EXTENT[0] / width, FULL_SIZE_EXTENT[1] / height
        width, height = FULL_SIZE_EXTENT
    start = _pose(reader, "start", sx, sy)
    start_speed = reader.number("start", "speed", 0.0)
    goal = _pose(reader, "goal", sx, sy)
    used_seed = file_seed if seed is None else seed

    spec = GridSpec(
        reader.number("map", "origin_x", 0.0),
        reader.number("map", "origin_y", 0.0),
        resolution,
        int(round(width / resolution)),
        int(round(height / resolution)),
    )
    obstacles = [_scaled(obstacle, sx, sy) for obstacle in _primitives(reader)]
    blocks = reader.integer("map", "random_blocks", 0)
    if blocks < 0:
        raise ScenarioError("map", "random_blocks", "must be non-negative")
    if blocks:
        size = reader.number("map", "block_size", RANDOM_BLOCK_SIZE)
        obstacles += _random_blocks(
            blocks, size, (width, height), [start[:2], goal[:2]], used_seed
        )

    if reader.has("map", "mask"):
        if not reader.has("map", "camera"):
            raise ScenarioError("map", "camera", "is required with a mask")
        mask = read_pgm(path.parent / reader.text("map", "mask"))
        intr, pose = read_camera(path.parent / reader.text("map", "camera"))
        try:
            grid = mask_to_grid(mask, intr, pose, spec)
        except MappingError as error:
            raise ScenarioError("map", "mask", str(error)) from error
        if obstacles:
            extra = rasterize(spec, obstacles).cells == OCCUPIED
            cells = grid.cells.copy()
            cells[extra] = OCCUPIED
            grid = grid.with_cells(cells)
    else:
        grid = rasterize(spec, obstacles)
    planning_grid = inflate(grid, inflation, unknown_as_occupied)

    hull = _hull(reader, path)
    weights = _weights(reader)
    cruise_speed, sensing_radius, nmpc, pid = _controllers(reader, hull)
    if abs(start_speed) > hull.u_max:
        raise ScenarioError("start", "speed", f"exceeds u_max {hull.u_max}")

    checker = FootprintChecker(planning_grid, HULL_FOOTPRINT, unknown_as_occupied)
    for section, pose in (("start", start), ("goal", goal)):
        if not grid.contains(pose.x, pose.y):
            raise ScenarioError(section, "", f"{section} lies outside the map")
        if not checker.is_free(pose):
            raise ScenarioError(section, "", f"{section} in collision")

    scenario = Scenario(
        name=name,
        seed=used_seed,
        grid=grid,
        planning_grid=planning_grid,
        start=start,
        start_speed=start_speed,
        goal=goal,
        hull=hull,
        weights=weights,
        cruise_speed=cruise_speed,
        sensing_radius=sensing_radius,
        inflation=inflation,
        nmpc=nmpc,
        pid=pid,
        unknown_as_occupied=unknown_as_occupied,
        obstacle_count=len(obstacles),
        settings=reader.settings,
    )
    if seed is not None:
        scenario = scenario.with_setting("scenario.seed", seed)
    if full_size:
        scenario = scenario.with_setting("map.extent", f"{width:g} x {height:g}")
    logger.info(
        "Loaded scenario %s: %dx%d cells, %d obstacles, %d occupied cells",
        name,
        grid.ncols,
        grid.nrows,
        len(obstacles),
        grid.occupied_count(),
    )
    return scenario


# --------------- Variants ---------------------------------------------------


class PipelineVariant(NamedTuple):
    tag: str
    description: str
    optimize: bool
    controller: ControllerName
    limited_perception: bool


VARIANTS: Final[Dict[str, PipelineVariant]] = {
    variant.tag: variant
    for variant in (
        PipelineVariant(
            "LOP",
            "replanning inside a sensing disc, locally optimized, NMPC tracking",
            True,
            "nmpc",
            True,
        ),
        PipelineVariant(
            "GP+LOP",
            "global search, unoptimized reference, NMPC tracking",
            False,
            "nmpc",
            False,
        ),
        PipelineVariant(
            "GOP+LOP",
            "global search and trajectory optimization, NMPC tracking",
            True,
            "nmpc",
            False,
        ),
        PipelineVariant(
            "GOP+LP",
            "global search and trajectory optimization, PID tracking",
            True,
            "pid",
            False,
        ),
    )
}


class VariantMetrics(TypedDict):
    generated_length: float
    executed_length: float
    rmse: float
    max_error: float
    mean_speed: float
    duration: float
    replans: int
    planning_s: float
    control_ms: float
    overruns: int


class VariantOutcome(NamedTuple):
    tag: str
    path: PlannedPath
    generated: Trajectory
    log: TrackingLog
    metrics: VariantMetrics

    @property
    def executed(self) -> Trajectory:
        return self.log.executed


def _search_options(scenario: Scenario) -> SearchOptions:
    return SearchOptions(
        xy_resolution=scenario.grid.resolution,
        unknown_as_occupied=scenario.unknown_as_occupied,
    )


def _optimizer_options(scenario: Scenario) -> OptimizerOptions:
    return OptimizerOptions(unknown_as_occupied=scenario.unknown_as_occupied)


def _at_rest(reference: Trajectory) -> VesselState:
    x, y, psi = reference.states[-1, :3]
    return VesselState(float(x), float(y), float(psi))


def _controller(
    scenario: Scenario, name: ControllerName
) -> Union[NmpcConfig, PidConfig]:
    return scenario.pid if name == "pid" else scenario.nmpc


def check_clearance(
    executed: Trajectory, grid: OccupancyGrid, unknown_as_occupied: bool = False
) -> None:
    """Every executed pose keeps the hull footprint off blocked cells"""
    checker = FootprintChecker(grid, HULL_FOOTPRINT, unknown_as_occupied)
    for index, (x, y, psi) in enumerate(executed.states[:, :3]):
        if not checker.is_free(SearchPose(float(x), float(y), float(psi))):
            raise StageFailure("safety", TrajectoryCollision(index, x, y))


def _metrics(
    generated: Trajectory, log: TrackingLog, planning_s: float, replans: int
) -> VariantMetrics:
    tracking = trajectory_metrics(log.executed, generated)
    return VariantMetrics(
        generated_length=polyline_length(generated.positions),
        executed_length=tracking["length"],
        rmse=tracking["rmse"],
        max_error=tracking["max_error"],
        mean_speed=tracking["mean_speed"],
        duration=tracking["duration"],
        replans=replans,
        planning_s=planning_s,
        control_ms=1e3 * float(np.mean(log.solve_times)),
        overruns=log.overrun_count,
    )


def _optimized(result: OptimizationResult) -> Trajectory:
    """The optimized trajectory; falling back on the warm start is a failure"""
    if result.used_warm_start:
        raise TrajectoryError(
            f"optimizer kept its warm start (objective {result.objective:.4g},"
            f" defect {result.max_defect:.2g})"
        )
    return result.trajectory


def _run_global(scenario: Scenario, variant: PipelineVariant) -> VariantOutcome:
    with stopwatch() as watch:
        with _stage("plan"):
            path = search(
                scenario.start,
                scenario.goal,
                scenario.planning_grid,
                opts=_search_options(scenario),
            )
            reference = build_reference(
                path,
                scenario.hull,
                scenario.cruise_speed,
                initial_speed=scenario.start_speed,
            )
        generated = reference
        if variant.optimize:
            with _stage("optimize"):
                result = solve_trajectory(
                    reference,
                    scenario.start_state,
                    _at_rest(reference),
                    scenario.planning_grid,
                    scenario.hull,
                    scenario.weights,
                    _optimizer_options(scenario),
                )
                generated = _optimized(result)
    with _stage("track"):
        log = run_tracking(
            generated,
            scenario.start_state,
            _controller(scenario, variant.controller),
            scenario.hull,
            grid=scenario.grid,
        )
    return VariantOutcome(
        variant.tag, path, generated, log, _metrics(generated, log, watch.elapsed, 0)
    )


class _SensedMap:
    """Cells seen so far from inside a sensing disc; unseen cells read as free"""

    def __init__(self, grid: OccupancyGrid, radius: float) -> None:
        self.grid = grid
        self.radius = radius
        self.centers_x, self.centers_y = cell_centers(grid.spec)
        self.known = np.zeros(grid.cells.shape, dtype=bool)
        self.occupied = grid.cells == OCCUPIED

    def sense(self, x: float, y: float) -> int:
        """Mark the disc around (x, y) as seen; returns newly seen occupied cells"""
        disc = np.hypot(self.centers_x - x, self.centers_y - y) <= self.radius
        fresh = disc & ~self.known
        self.known |= disc
        return int(np.count_nonzero(fresh & self.occupied))

    def visible(self) -> OccupancyGrid:
        cells = np.where(self.known, self.grid.cells, FREE)
        return self.grid.with_cells(cells)


def _local_plan(
    reference: Trajectory,
    state: VesselState,
    grid: OccupancyGrid,
    scenario: Scenario,
) -> Trajectory:
    """
    Optimize the first window of a segment reference with a free end and
    splice the remaining reference knots behind it; short references are
    optimized whole and pinned to their final knot.
    """
    opts = _optimizer_options(scenario)
    if reference.knot_count <= LOCAL_WINDOW_KNOTS:
        return _optimized(
            solve_trajectory(
                reference,
                state,
                _at_rest(reference),
                grid,
                scenario.hull,
                scenario.weights,
                opts,
            )
        )
    head = reference._replace(
        states=reference.states[:LOCAL_WINDOW_KNOTS],
        controls=reference.controls[: LOCAL_WINDOW_KNOTS - 1],
    )
    window = _optimized(
        solve_trajectory(head, state, None, grid, scenario.hull, scenario.weights, opts)
    )
    states = np.vstack([window.states, reference.states[LOCAL_WINDOW_KNOTS:]])
    states[:, 2] = np.unwrap(states[:, 2])
    # The kinematic tail carries no controls of its own
    tail = feedforward_controls(
        states[LOCAL_WINDOW_KNOTS - 1 :], scenario.hull, reference.dt
    )
    controls = np.vstack([window.controls, tail])
    return Trajectory.from_arrays(reference.dt, states, controls, "optimized")


def _joined(pieces: Sequence[Trajectory]) -> Trajectory:
    """Join executed runs; each run starts on the knot where the last one ended"""
    states = np.vstack([pieces[0].states] + [piece.states[1:] for piece in pieces[1:]])
    states[:, 2] = np.unwrap(states[:, 2])
    controls = np.vstack([piece.controls for piece in pieces])
    return Trajectory.from_arrays(pieces[0].dt, states, controls, "executed")


def _followed(segment: Trajectory, ticks: int) -> Tuple[FloatArray, FloatArray]:
    """
    The first `ticks` knots and controls of a segment reference, holding its
    final knot if tracking ran past its end
    """
    pad = max(0, ticks - segment.knot_count)
    states = np.pad(segment.states, ((0, pad), (0, 0)), mode="edge")[:ticks]
    controls = np.pad(segment.controls, ((0, pad + 1), (0, 0)))[:ticks]
    return states, controls


def _run_limited_perception(
    scenario: Scenario, variant: PipelineVariant
) -> VariantOutcome:
    sensed = _SensedMap(scenario.grid, scenario.sensing_radius)
    state = scenario.start_state
    sensed.sense(state.x, state.y)
    controller = _controller(scenario, variant.controller)

    def discovered(current: VesselState, t: float) -> bool:
        return sensed.sense(current.x, current.y) > 0

    planning_s = 0.0
    replans = 0
    # Reference knots actually followed, aligned one to one with executed knots
    followed: List[Tuple[FloatArray, FloatArray]] = []
    logs: List[TrackingLog] = []
    while True:
        with stopwatch() as watch:
            visible = inflate(
                sensed.visible(), scenario.inflation, scenario.unknown_as_occupied
            )
            start = SearchPose(state.x, state.y, state.psi)
            with _stage("plan"):
                path = search(
                    start, scenario.goal, visible, opts=_search_options(scenario)
                )
                reference = build_reference(
                    path, scenario.hull, scenario.cruise_speed, initial_speed=state.u
                )
            with _stage("optimize"):
                segment = _local_plan(reference, state, visible, scenario)
        planning_s += watch.elapsed

        with _stage("track"):
            log = run_tracking(
                segment,
                state,
                controller,
                scenario.hull,
                grid=scenario.grid,
                stop_condition=discovered if replans < MAX_REPLANS else None,
            )
        logs.append(log)
        if not log.stopped_early:
            followed.append((segment.states, segment.controls))
            break
        followed.append(_followed(segment, len(log.executed.controls)))
        state = log.executed.state_at(-1)
        replans += 1
        logger.info(
            "Obstacle sensed at (%.1f, %.1f); replan %d", state.x, state.y, replans
        )

    states = np.vstack([piece[0] for piece in followed])
    states[:, 2] = np.unwrap(states[:, 2])
    generated = Trajectory.from_arrays(
        segment.dt, states, np.vstack([piece[1] for piece in followed]), "optimized"
    )
    offsets = np.cumsum([0] + [len(log.executed.controls) for log in logs[:-1]])
    combined = TrackingLog(
        _joined([log.executed for log in logs]),
        np.concatenate(
            [
                np.minimum(log.ref_indices, segment_knots - 1) + offset
                for log, offset, segment_knots in zip(
                    logs, offsets, [len(piece[0]) for piece in followed]
                )
            ]
        ),
        np.concatenate([log.solve_times for log in logs]),
        np.concatenate([log.overruns for log in logs]),
        sum(log.degraded_steps for log in logs),
        False,
    )
    return VariantOutcome(
        variant.tag,
        path,
        generated,
        combined,
        _metrics(generated, combined, planning_s, replans),
    )


def run_variant(
    scenario: Scenario, variant: Union[str, PipelineVariant]
) -> VariantOutcome:
    """
    Run one pipeline end to end and check the executed trajectory against
    the uninflated map. Stage errors are raised as StageFailure.
    """
    if isinstance(variant, str):
        if variant not in VARIANTS:
            raise ValueError(f"unknown pipeline variant {variant!r}")
        variant = VARIANTS[variant]
    logger.info("Running %s on %s: %s", variant.tag, scenario.name, variant.description)
    if variant.limited_perception:
        outcome = _run_limited_perception(scenario, variant)
    else:
        outcome = _run_global(scenario, variant)
    check_clearance(outcome.executed, scenario.grid, scenario.unknown_as_occupied)
    logger.info(
        "%s: generated %.2f m, executed %.2f m, RMSE %.3f m",
        variant.tag,
        outcome.metrics["generated_length"],
        outcome.metrics["executed_length"],
        outcome.metrics["rmse"],
    )
    return outcome


def track_trajectory(
    scenario: Scenario, trajectory: Trajectory, controller: ControllerName
) -> Tuple[TrackingLog, VariantMetrics]:
    """Track an existing trajectory from its first knot"""
    with _stage("track"):
        log = run_tracking(
            trajectory,
            trajectory.state_at(0),
            _controller(scenario, controller),
            scenario.hull,
            grid=scenario.grid,
        )
    check_clearance(log.executed, scenario.grid, scenario.unknown_as_occupied)
    return log, _metrics(trajectory, log, 0.0, 0)


# --------------- Ablation ---------------------------------------------------

# Written to the comparison CSV; timing columns live in the timings file
TABLE_COLUMNS: Final = [
    "variant",
    "status",
    "generated_length",
    "executed_length",
    "rmse",
    "max_error",
    "mean_speed",
    "duration",
    "replans",
]
TIMING_COLUMNS: Final = ["variant", "planning_s", "control_ms", "overruns"]


class BenchReport(NamedTuple):
    scenario: str
    tags: List[str]
    outcomes: Dict[str, VariantOutcome]
    failures: Dict[str, StageFailure]
    files: List[Path]

    def _rows(self, columns: Sequence[str]) -> pd.DataFrame:
        rows = []
        for tag in self.tags:
            row: Dict[str, object] = {column: np.nan for column in columns}
            row["variant"] = tag
            if tag in self.outcomes:
                row.update(
                    {
                        key: value
                        for key, value in self.outcomes[tag].metrics.items()
                        if key in columns
                    }
                )
                row["status"] = "ok"
            else:
                row["status"] = f"failed ({self.failures[tag].stage})"
            rows.append({column: row[column] for column in columns})
        return pd.DataFrame(rows, columns=list(columns))

    def table(self) -> pd.DataFrame:
        return self._rows(TABLE_COLUMNS)

    def timings(self) -> pd.DataFrame:
        return self._rows(TIMING_COLUMNS)

    def to_text(self) -> str:
        frame = self.table().merge(self.timings(), on="variant")
        return frame.to_string(index=False, float_format=lambda value: f"{value:.3f}")

    @property
    def succeeded(self) -> bool:
        return not self.failures


def _stray_stage(error: Exception) -> Stage:
    if isinstance(error, PlanningError):
        return "plan"
    if isinstance(error, TrajectoryError):
        return "optimize"
    return "track"


def _attempt(
    scenario: Scenario, tag: str
) -> Union[VariantOutcome, StageFailure]:
    """Run one variant; any pipeline error is reported instead of raised"""
    try:
        return run_variant(scenario, tag)
    except StageFailure as failure:
        logger.warning(
            "%s failed in the %s stage: %s", tag, failure.stage, failure.error
        )
        return failure
    except (
        PlanningError,
        TrajectoryError,
        TrackingAborted,
        IntegrationError,
        InvalidTrajectory,
    ) as error:
        failure = StageFailure(_stray_stage(error), error)
        logger.warning("%s failed outside a stage: %s", tag, error)
        return failure


def file_tag(tag: str) -> str:
    return tag.replace("+", "_")


def write_outcome(
    scenario: Scenario, outcome: VariantOutcome, out_dir: Path
) -> List[Path]:
    stem = f"{scenario.name}_{file_tag(outcome.tag)}"
    files = [
        out_dir / f"{stem}_path.csv",
        out_dir / f"{stem}_trajectory.csv",
        out_dir / f"{stem}_executed.csv",
    ]
    write_path(files[0], outcome.path)
    write_trajectory(files[1], outcome.generated)
    write_trajectory(files[2], outcome.executed)
    return files


def run_ablation(
    scenario: Scenario,
    tags: Optional[Sequence[str]] = None,
    out_dir: Optional[PathLike] = None,
    svg: bool = True,
    jobs: int = 1,
) -> BenchReport:
    """
    Run the variants (all by default) on one scenario. Failed variants are
    kept in the report and marked; output files go to out_dir when given.
    """
    requested = list(VARIANTS) if tags is None else list(tags)
    if not requested:
        raise ValueError("an ablation needs at least one variant")
    unknown = [tag for tag in requested if tag not in VARIANTS]
    if unknown:
        raise ValueError(f"unknown pipeline variants: {', '.join(unknown)}")
    ordered = [tag for tag in VARIANTS if tag in requested]

    results = map_in_threads(
        lambda tag: _attempt(scenario, tag), ordered, max_workers=jobs
    )
    outcomes = {
        tag: result
        for tag, result in zip(ordered, results)
        if isinstance(result, VariantOutcome)
    }
    failures = {
        tag: result
        for tag, result in zip(ordered, results)
        if isinstance(result, StageFailure)
    }
    report = BenchReport(scenario.name, ordered, outcomes, failures, [])
    if out_dir is None:
        return report

    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    files = [out_path / f"{scenario.name}_ablation.csv"]
    report.table().to_csv(files[0], index=False, float_format="%.6f")
    for tag in ordered:
        if tag in outcomes:
            files += write_outcome(scenario, outcomes[tag], out_path)
    if svg:
        overlays = [
            Overlay(outcomes[tag].generated, tag) for tag in ordered if tag in outcomes
        ]
        document = render_svg(scenario.grid, overlays, title=scenario.name)
        files.append(out_path / f"{scenario.name}_ablation.svg")
        files[-1].write_text(document)
    timings = out_path / f"{scenario.name}_timings.txt"
    timings.write_text(
        report.timings().to_string(
            index=False, float_format=lambda value: f"{value:.3f}"
        )
        + "\n"
    )
    files.append(timings)
    return report._replace(files=files)
