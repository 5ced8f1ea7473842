"""
Hybrid A* search over continuous (x, y, psi) poses reached by arc motion
primitives, with binned duplicate detection and Reeds-Shepp connection to the
goal
"""

import heapq
import itertools
import logging
import math
from typing import Dict, List, NamedTuple, Optional, Set, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from usvplanner.config.defaults import (
    ANALYTIC_HEURISTIC_RADIUS,
    CURVATURE_PENALTY,
    GRID_RESOLUTION,
    HEADING_BINS,
    HULL_FOOTPRINT,
    MAX_EXPANSIONS,
    MIN_TURN_RADIUS,
    PATH_SAMPLE_STEP,
    PRIMITIVE_ARC_LENGTH,
    REACH_THRESHOLD,
    REVERSE_PENALTY,
    SWITCH_PENALTY,
    UNKNOWN_AS_OCCUPIED,
)
from usvplanner.datatypes import Direction, OccupancyGrid, PlannedPath, SearchPose
from usvplanner.grid import signed_distance
from usvplanner.helper import wrap_angle
from usvplanner.planning.reeds_shepp import (
    reeds_shepp_distance,
    sample_path,
    shortest_path,
)


logger = logging.getLogger(__name__)

Footprint = Tuple[float, float]

# Worst-case ratio of 8-connected grid distance to straight-line distance
OCTILE_OVERESTIMATE = 1.0 / math.cos(math.pi / 8)


class PlanningError(Exception):
    pass


class StartInCollision(PlanningError):
    def __init__(self, pose: SearchPose) -> None:
        super().__init__(f"start pose ({pose.x:.2f}, {pose.y:.2f}) is in collision")


class GoalInCollision(PlanningError):
    def __init__(self, pose: SearchPose) -> None:
        super().__init__(f"goal pose ({pose.x:.2f}, {pose.y:.2f}) is in collision")


class NoPathFound(PlanningError):
    def __init__(self, expansions: int) -> None:
        super().__init__(f"no path found after {expansions} expansions")
        self.expansions = expansions


class MotionPrimitiveSet(NamedTuple):
    arc_length: float = PRIMITIVE_ARC_LENGTH
    curvatures: Tuple[float, ...] = (
        0.0,
        1.0 / MIN_TURN_RADIUS,
        -1.0 / MIN_TURN_RADIUS,
        0.5 / MIN_TURN_RADIUS,
        -0.5 / MIN_TURN_RADIUS,
    )
    allow_reverse: bool = True
    reverse_penalty: float = REVERSE_PENALTY
    switch_penalty: float = SWITCH_PENALTY
    curvature_penalty: float = CURVATURE_PENALTY

    @classmethod
    def for_turn_radius(
        cls, radius: float, allow_reverse: bool = True
    ) -> "MotionPrimitiveSet":
        return cls(
            curvatures=(0.0, 1 / radius, -1 / radius, 0.5 / radius, -0.5 / radius),
            allow_reverse=allow_reverse,
        )

    def validate(self) -> "MotionPrimitiveSet":
        if not self.arc_length > 0:
            raise ValueError("primitive arc length must be positive")
        if 0.0 not in self.curvatures:
            raise ValueError("primitive curvatures must include straight motion")
        for curvature in self.curvatures:
            if abs(curvature) * self.arc_length >= math.pi:
                raise ValueError(f"curvature {curvature} loops within one primitive")
        return self


class SearchOptions(NamedTuple):
    xy_resolution: float = GRID_RESOLUTION
    heading_bins: int = HEADING_BINS
    reach_threshold: float = REACH_THRESHOLD
    min_turn_radius: float = MIN_TURN_RADIUS
    footprint: Footprint = HULL_FOOTPRINT
    sample_step: float = PATH_SAMPLE_STEP
    analytic_shots: bool = True
    analytic_heuristic_radius: float = ANALYTIC_HEURISTIC_RADIUS
    max_expansions: int = MAX_EXPANSIONS
    unknown_as_occupied: bool = UNKNOWN_AS_OCCUPIED


class SearchNode:
    __slots__ = ("pose", "g", "h", "parent", "primitive", "trace", "travelled")

    def __init__(
        self,
        pose: SearchPose,
        g: float,
        h: float,
        parent: Optional["SearchNode"],
        primitive: Optional[int],
        trace: List[SearchPose],
        travelled: float,
    ) -> None:
        self.pose = pose
        self.g = g
        self.h = h
        self.parent = parent
        self.primitive = primitive
        # Intermediate poses from the parent, ending at pose
        self.trace = trace
        self.travelled = travelled

    @property
    def f(self) -> float:
        return self.g + self.h


class FootprintChecker:
    """
    Exact test of an oriented rectangular hull against the blocked cells of a
    grid, with a clearance shortcut for poses far from any obstacle.
    """

    def __init__(
        self,
        grid: OccupancyGrid,
        footprint: Footprint = HULL_FOOTPRINT,
        unknown_as_occupied: bool = UNKNOWN_AS_OCCUPIED,
    ) -> None:
        length, width = footprint
        if not (length > 0 and width > 0):
            raise ValueError("footprint dimensions must be positive")
        self.grid = grid
        self.half_length = 0.5 * length
        self.half_width = 0.5 * width
        self.blocked = grid.blocked(unknown_as_occupied)
        self.clearance = signed_distance(grid, unknown_as_occupied)
        self._safe_clearance = math.hypot(self.half_length, self.half_width) + (
            grid.resolution * math.sqrt(2)
        )

    def corners(self, pose: SearchPose) -> np.ndarray:
        c, s = math.cos(pose.psi), math.sin(pose.psi)
        local = np.array(
            [
                [self.half_length, self.half_width],
                [self.half_length, -self.half_width],
                [-self.half_length, -self.half_width],
                [-self.half_length, self.half_width],
            ]
        )
        rotation = np.array([[c, -s], [s, c]])
        return local @ rotation.T + np.array([pose.x, pose.y])

    def is_free(self, pose: SearchPose) -> bool:
        grid = self.grid
        if not grid.contains(pose.x, pose.y):
            return False
        corners = self.corners(pose)
        if not all(grid.contains(x, y) for x, y in corners):
            return False
        row, col = grid.cell_of(pose.x, pose.y)
        if self.clearance[row, col] > self._safe_clearance:
            return True

        lower = corners.min(axis=0)
        upper = corners.max(axis=0)
        row0, col0 = grid.cell_of(*lower)
        row1, col1 = grid.cell_of(*upper)
        window = self.blocked[row0 : row1 + 1, col0 : col1 + 1]
        rows, cols = np.nonzero(window)
        if len(rows) == 0:
            return True
        return not self._overlaps_any(pose, rows + row0, cols + col0)

    def _overlaps_any(
        self, pose: SearchPose, rows: np.ndarray, cols: np.ndarray
    ) -> bool:
        """Separating-axis test between the hull and each candidate cell"""
        eps = 1e-9
        half_cell = 0.5 * self.grid.resolution
        centers_x = self.grid.origin_x + (cols + 0.5) * self.grid.resolution
        centers_y = self.grid.origin_y + (rows + 0.5) * self.grid.resolution
        dx, dy = centers_x - pose.x, centers_y - pose.y
        c, s = abs(math.cos(pose.psi)), abs(math.sin(pose.psi))
        extent_x = self.half_length * c + self.half_width * s
        extent_y = self.half_length * s + self.half_width * c
        cell_extent = half_cell * (c + s)
        along = dx * math.cos(pose.psi) + dy * math.sin(pose.psi)
        across = -dx * math.sin(pose.psi) + dy * math.cos(pose.psi)
        separated = (
            (np.abs(dx) >= extent_x + half_cell - eps)
            | (np.abs(dy) >= extent_y + half_cell - eps)
            | (np.abs(along) >= self.half_length + cell_extent - eps)
            | (np.abs(across) >= self.half_width + cell_extent - eps)
        )
        return bool(np.any(~separated))


def collision_free(
    pose: SearchPose,
    grid: OccupancyGrid,
    footprint: Footprint = HULL_FOOTPRINT,
    unknown_as_occupied: bool = UNKNOWN_AS_OCCUPIED,
) -> bool:
    return FootprintChecker(grid, footprint, unknown_as_occupied).is_free(pose)


class HeuristicField:
    """
    Obstacle-aware distance-to-goal over the 8-connected free cells of the
    grid, scaled down so that it never exceeds the true travel distance.
    """

    # fmt: off
    NEIGHBOUR_OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))
    # fmt: on

    def __init__(
        self,
        grid: OccupancyGrid,
        goal: SearchPose,
        unknown_as_occupied: bool = UNKNOWN_AS_OCCUPIED,
    ) -> None:
        self.grid = grid
        free = ~grid.blocked(unknown_as_occupied)
        goal_row, goal_col = grid.cell_of(goal.x, goal.y)
        free[goal_row, goal_col] = True
        nrows, ncols = free.shape
        index = np.arange(nrows * ncols).reshape(nrows, ncols)

        sources, targets, weights = [], [], []
        for d_row, d_col in self.NEIGHBOUR_OFFSETS:
            row_slice = slice(0, nrows - d_row)
            col_slice = slice(max(0, -d_col), ncols - max(0, d_col))
            moved_rows = slice(d_row, nrows)
            moved_cols = slice(max(0, d_col), ncols - max(0, -d_col))
            both = free[row_slice, col_slice] & free[moved_rows, moved_cols]
            sources.append(index[row_slice, col_slice][both])
            targets.append(index[moved_rows, moved_cols][both])
            step = grid.resolution * math.hypot(d_row, d_col)
            weights.append(np.full(int(both.sum()), step))

        edges = (np.concatenate(sources), np.concatenate(targets))
        graph = coo_matrix(
            (np.concatenate(weights), edges),
            shape=(nrows * ncols, nrows * ncols),
        ).tocsr()
        goal_index = int(index[goal_row, goal_col])
        distances = dijkstra(graph, directed=False, indices=goal_index)
        self.distances = distances.reshape(nrows, ncols)
        self._slack = grid.resolution * math.sqrt(2)

    def distance(self, x: float, y: float) -> float:
        if not self.grid.contains(x, y):
            return math.inf
        row, col = self.grid.cell_of(x, y)
        raw = self.distances[row, col]
        if not math.isfinite(raw):
            return math.inf
        return max(0.0, raw / OCTILE_OVERESTIMATE - self._slack)


def heuristic(
    pose: SearchPose,
    goal: SearchPose,
    grid: OccupancyGrid,
    field: Optional[HeuristicField] = None,
    min_turn_radius: float = MIN_TURN_RADIUS,
) -> float:
    if field is None:
        field = HeuristicField(grid, goal)
    holonomic = field.distance(pose.x, pose.y)
    if not math.isfinite(holonomic):
        return math.inf
    return max(holonomic, reeds_shepp_distance(pose, goal, min_turn_radius))


def _arc_pose(
    pose: SearchPose, curvature: float, signed_arc: float, direction: Direction
) -> SearchPose:
    if curvature == 0.0:
        return SearchPose(
            pose.x + signed_arc * math.cos(pose.psi),
            pose.y + signed_arc * math.sin(pose.psi),
            pose.psi,
            direction,
        )
    psi = pose.psi + curvature * signed_arc
    return SearchPose(
        pose.x + (math.sin(psi) - math.sin(pose.psi)) / curvature,
        pose.y - (math.cos(psi) - math.cos(pose.psi)) / curvature,
        wrap_angle(psi),
        direction,
    )


class _Search:
    def __init__(
        self,
        start: SearchPose,
        goal: SearchPose,
        grid: OccupancyGrid,
        prims: MotionPrimitiveSet,
        opts: SearchOptions,
    ) -> None:
        self.start = start._replace(psi=wrap_angle(start.psi))
        self.goal = goal._replace(psi=wrap_angle(goal.psi))
        self.grid = grid
        self.prims = prims
        self.opts = opts
        self.checker = FootprintChecker(grid, opts.footprint, opts.unknown_as_occupied)
        self.substeps = max(1, math.ceil(prims.arc_length / opts.sample_step - 1e-9))
        self.directions: Tuple[Tuple[float, Direction], ...] = (
            ((1.0, "forward"), (-1.0, "reverse"))
            if prims.allow_reverse
            else ((1.0, "forward"),)
        )

    def bin_of(self, pose: SearchPose) -> Tuple[int, int, int]:
        heading_width = 2 * math.pi / self.opts.heading_bins
        return (
            math.floor(pose.x / self.opts.xy_resolution),
            math.floor(pose.y / self.opts.xy_resolution),
            math.floor((pose.psi + math.pi) / heading_width) % self.opts.heading_bins,
        )

    def estimate(self, pose: SearchPose) -> float:
        holonomic = self.field.distance(pose.x, pose.y)
        if not math.isfinite(holonomic):
            return math.inf
        if math.hypot(pose.x - self.goal.x, pose.y - self.goal.y) > (
            self.opts.analytic_heuristic_radius
        ):
            return holonomic
        return max(
            holonomic,
            reeds_shepp_distance(pose, self.goal, self.opts.min_turn_radius),
        )

    def successors(self, node: SearchNode) -> List[SearchNode]:
        prims = self.prims
        children = []
        for index, (sign, direction) in enumerate(self.directions):
            for k, curvature in enumerate(prims.curvatures):
                trace = [
                    _arc_pose(
                        node.pose,
                        curvature,
                        sign * prims.arc_length * (i + 1) / self.substeps,
                        direction,
                    )
                    for i in range(self.substeps)
                ]
                if not all(self.checker.is_free(pose) for pose in trace):
                    continue
                cost = prims.arc_length
                if direction == "reverse":
                    cost *= prims.reverse_penalty
                if node.primitive is not None and node.pose.direction != direction:
                    cost += prims.switch_penalty
                cost += prims.curvature_penalty * abs(curvature) * prims.arc_length
                h = self.estimate(trace[-1])
                if not math.isfinite(h):
                    continue
                children.append(
                    SearchNode(
                        trace[-1],
                        node.g + cost,
                        h,
                        node,
                        index * len(prims.curvatures) + k,
                        trace,
                        node.travelled + prims.arc_length,
                    )
                )
        return children

    def connect(self, node: SearchNode) -> Optional[Tuple[List[SearchPose], float]]:
        path = shortest_path(node.pose, self.goal, self.opts.min_turn_radius)
        poses = sample_path(node.pose, path, self.opts.sample_step)
        if all(self.checker.is_free(pose) for pose in poses[1:]):
            return poses[1:], path.length
        return None

    def assemble(
        self, node: SearchNode, tail: List[SearchPose], tail_length: float
    ) -> PlannedPath:
        pieces = []
        current: Optional[SearchNode] = node
        while current is not None and current.parent is not None:
            pieces.append(current.trace)
            current = current.parent
        poses = [self.start]
        for trace in reversed(pieces):
            poses.extend(trace)
        poses.extend(tail)
        return PlannedPath(poses, node.travelled + tail_length)

    def run(self) -> PlannedPath:
        opts = self.opts
        if not self.checker.is_free(self.start):
            raise StartInCollision(self.start)
        if not self.checker.is_free(self.goal):
            raise GoalInCollision(self.goal)
        self.field = HeuristicField(self.grid, self.goal, opts.unknown_as_occupied)

        h0 = self.estimate(self.start)
        if not math.isfinite(h0):
            raise NoPathFound(0)
        sequence = itertools.count()
        root = SearchNode(self.start, 0.0, h0, None, None, [self.start], 0.0)
        open_list: List[Tuple[float, float, int, SearchNode]] = [
            (root.f, root.h, next(sequence), root)
        ]
        best_g: Dict[Tuple[int, int, int], float] = {self.bin_of(self.start): 0.0}
        closed: Set[Tuple[int, int, int]] = set()
        expansions = 0

        while open_list:
            _, _, _, node = heapq.heappop(open_list)
            key = self.bin_of(node.pose)
            # Lazy deletion of entries superseded by a cheaper re-push
            if key in closed or node.g > best_g.get(key, math.inf):
                continue
            closed.add(key)
            expansions += 1
            if expansions > opts.max_expansions:
                break

            near = math.hypot(
                node.pose.x - self.goal.x, node.pose.y - self.goal.y
            ) <= opts.reach_threshold
            shot_interval = max(1, int(node.h / opts.reach_threshold))
            if near or (opts.analytic_shots and expansions % shot_interval == 0):
                connection = self.connect(node)
                if connection is not None:
                    logger.debug("Connected to goal after %d expansions", expansions)
                    return self.assemble(node, *connection)

            for child in self.successors(node):
                child_key = self.bin_of(child.pose)
                if child_key in closed:
                    continue
                if child.g < best_g.get(child_key, math.inf):
                    best_g[child_key] = child.g
                    heapq.heappush(
                        open_list, (child.f, child.h, next(sequence), child)
                    )

        logger.info("Search exhausted after %d expansions", expansions)
        raise NoPathFound(expansions)


def search(
    start: SearchPose,
    goal: SearchPose,
    grid: OccupancyGrid,
    prims: Optional[MotionPrimitiveSet] = None,
    opts: SearchOptions = SearchOptions(),
) -> PlannedPath:
    if prims is None:
        prims = MotionPrimitiveSet.for_turn_radius(opts.min_turn_radius)
    return _Search(start, goal, grid, prims.validate(), opts).run()
