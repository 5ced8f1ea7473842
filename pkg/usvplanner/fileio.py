"""
Readers and writers for the files exchanged between pipeline stages: PGM
masks, camera and hull parameter files, grid files and the CSV formats of
paths, trajectories and tracking logs
"""

import configparser
import logging
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
import pandas as pd

from usvplanner.config.defaults import MASK_THRESHOLD
from usvplanner.control import TrackingLog
from usvplanner.datatypes import (
    CELL_SYMBOLS,
    HullParams,
    InvalidHullParams,
    OccupancyGrid,
    PlannedPath,
    Provenance,
    SearchPose,
    Trajectory,
)
from usvplanner.mapping import (
    CameraIntrinsics,
    CameraPose,
    MappingError,
    SegMask,
)


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FLOAT_FORMAT = "%.6f"
GRID_MAGIC = "OCCGRID"

PATH_COLUMNS = ["s", "x", "y", "psi", "direction"]
TRAJECTORY_COLUMNS = ["t", "x", "y", "psi", "u", "v", "r", "tau_u", "tau_r"]
TRACKING_COLUMNS = TRAJECTORY_COLUMNS + ["ref_index", "solve_ms"]

SYMBOL_CELLS = {symbol: state for state, symbol in CELL_SYMBOLS.items()}


class FileFormatError(ValueError):
    def __init__(self, path: PathLike, detail: str) -> None:
        super().__init__(f"{path}: {detail}")
        self.path = str(path)


# --------------- Masks ------------------------------------------------------


def _pgm_header(data: bytes, path: PathLike) -> List[int]:
    """Width, height, maxval and the offset of the first raster byte"""
    values: List[int] = []
    position = 2
    while len(values) < 3:
        while position < len(data) and data[position : position + 1].isspace():
            position += 1
        if data[position : position + 1] == b"#":
            while position < len(data) and data[position : position + 1] != b"\n":
                position += 1
            continue
        start = position
        while position < len(data) and not data[position : position + 1].isspace():
            position += 1
        token = data[start:position]
        if not token.isdigit():
            raise FileFormatError(path, f"bad PGM header token {token!r}")
        values.append(int(token))
    # Exactly one whitespace byte separates the header from the raster
    return values + [position + 1]


def read_pgm(path: PathLike, threshold: int = MASK_THRESHOLD) -> SegMask:
    """8-bit binary PGM; pixels at or above threshold are obstacles"""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise FileFormatError(path, "only binary (P5) PGM masks are supported")
    width, height, maxval, offset = _pgm_header(data, path)
    if not 0 < maxval < 256:
        raise FileFormatError(path, f"expected an 8-bit PGM, got maxval {maxval}")
    raster = np.frombuffer(data, dtype=np.uint8, count=-1, offset=offset)
    if raster.size < width * height:
        raise FileFormatError(
            path, f"raster holds {raster.size} bytes, need {width * height}"
        )
    pixels = raster[: width * height].reshape(height, width)
    return SegMask(pixels >= threshold)


def write_pgm(path: PathLike, mask: SegMask) -> None:
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    raster = np.where(mask.bits, 255, 0).astype(np.uint8).tobytes()
    Path(path).write_bytes(header + raster)


# --------------- Parameter files --------------------------------------------


def read_ini(path: PathLike, default_section: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    try:
        text = Path(path).read_text()
    except OSError as error:
        raise FileFormatError(path, f"cannot be read ({error.strerror})") from error
    try:
        parser.read_string(text, source=str(path))
    except configparser.MissingSectionHeaderError:
        parser.read_string(f"[{default_section}]\n{text}", source=str(path))
    except configparser.Error as error:
        raise FileFormatError(path, str(error)) from error
    return parser


def _floats(path: PathLike, key: str, value: str, count: int) -> List[float]:
    try:
        numbers = [float(part) for part in value.split(",")]
    except ValueError as error:
        raise FileFormatError(path, f"'{key}' must be numeric: {value!r}") from error
    if len(numbers) != count:
        raise FileFormatError(path, f"'{key}' needs {count} values, got {len(numbers)}")
    return numbers


def hull_from_mapping(
    path: PathLike, values: Dict[str, str], base: Union[HullParams, None] = None
) -> HullParams:
    """
    Build hull parameters from string values; keys missing from values are
    taken from base, or are an error without one.
    """
    fields: Dict[str, float] = {} if base is None else base._asdict()
    unknown = set(values) - set(HullParams._fields) - {"file"}
    if unknown:
        raise FileFormatError(path, f"unknown hull keys: {', '.join(sorted(unknown))}")
    for name in HullParams._fields:
        if name in values:
            fields[name] = _floats(path, name, values[name], 1)[0]
        elif name not in fields:
            raise FileFormatError(path, f"missing hull key '{name}'")
    try:
        return HullParams(**fields).validate()
    except InvalidHullParams as error:
        raise FileFormatError(path, str(error)) from error


def read_hull(path: PathLike) -> HullParams:
    parser = read_ini(path, "hull")
    if "hull" not in parser:
        raise FileFormatError(path, "missing [hull] section")
    return hull_from_mapping(path, dict(parser["hull"]))


def read_camera(path: PathLike) -> Tuple[CameraIntrinsics, CameraPose]:
    parser = read_ini(path, "intrinsics")
    for section in ("intrinsics", "pose"):
        if section not in parser:
            raise FileFormatError(path, f"missing [{section}] section")
    intrinsics = parser["intrinsics"]
    try:
        intr = CameraIntrinsics(
            fx=float(intrinsics["fx"]),
            fy=float(intrinsics["fy"]),
            cx=float(intrinsics["cx"]),
            cy=float(intrinsics["cy"]),
            width=int(intrinsics["width"]),
            height=int(intrinsics["height"]),
        ).validate()
    except KeyError as error:
        raise FileFormatError(path, f"missing intrinsics key {error}") from error
    except (ValueError, MappingError) as error:
        raise FileFormatError(path, f"bad intrinsics: {error}") from error

    pose = parser["pose"]
    for key in ("rotation", "translation"):
        if key not in pose:
            raise FileFormatError(path, f"missing pose key '{key}'")
    rotation = _floats(path, "rotation", pose["rotation"], 9)
    translation = _floats(path, "translation", pose["translation"], 3)
    try:
        return intr, CameraPose(rotation, translation)
    except MappingError as error:
        raise FileFormatError(path, str(error)) from error


# --------------- Grids ------------------------------------------------------


def write_grid(path: PathLike, grid: OccupancyGrid) -> None:
    """Header line, then one line of cell symbols per row starting at row 0"""
    lines = [
        f"{GRID_MAGIC} {grid.ncols} {grid.nrows} {float(grid.resolution)!r}"
        f" {float(grid.origin_x)!r} {float(grid.origin_y)!r}"
    ]
    lines += ["".join(CELL_SYMBOLS[int(cell)] for cell in row) for row in grid.cells]
    Path(path).write_text("\n".join(lines) + "\n")


def read_grid(path: PathLike) -> OccupancyGrid:
    lines = Path(path).read_text().split()
    if len(lines) < 6 or lines[0] != GRID_MAGIC:
        raise FileFormatError(path, f"missing '{GRID_MAGIC}' header")
    try:
        ncols, nrows = int(lines[1]), int(lines[2])
        resolution, origin_x, origin_y = (float(value) for value in lines[3:6])
    except ValueError as error:
        raise FileFormatError(path, f"bad grid header: {error}") from error
    rows = lines[6:]
    if len(rows) != nrows:
        raise FileFormatError(path, f"expected {nrows} rows, found {len(rows)}")
    cells = np.empty((nrows, ncols), dtype=np.int8)
    for index, row in enumerate(rows):
        if len(row) != ncols:
            raise FileFormatError(path, f"row {index} has {len(row)} cells")
        try:
            cells[index] = [SYMBOL_CELLS[symbol] for symbol in row]
        except KeyError as error:
            raise FileFormatError(
                path, f"bad cell symbol {error} in row {index}"
            ) from error
    if not resolution > 0:
        raise FileFormatError(path, "resolution must be positive")
    return OccupancyGrid(origin_x, origin_y, resolution, cells)


# --------------- CSV --------------------------------------------------------


def _read_csv(path: PathLike, columns: List[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as error:
        raise FileFormatError(path, str(error)) from error
    if list(frame.columns) != columns:
        raise FileFormatError(
            path,
            f"expected columns {', '.join(columns)};"
            f" got {', '.join(map(str, frame.columns))}",
        )
    return frame


def path_frame(path: PlannedPath) -> pd.DataFrame:
    poses = path.as_array()
    return pd.DataFrame(
        {
            "s": path.arc_lengths(),
            "x": poses[:, 0],
            "y": poses[:, 1],
            "psi": poses[:, 2],
            "direction": [pose.direction for pose in path.poses],
        },
        columns=PATH_COLUMNS,
    )


def write_path(path: PathLike, planned: PlannedPath) -> None:
    path_frame(planned).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_path(path: PathLike) -> PlannedPath:
    frame = _read_csv(path, PATH_COLUMNS)
    if not frame["direction"].isin(["forward", "reverse"]).all():
        raise FileFormatError(path, "direction must be 'forward' or 'reverse'")
    poses = [
        SearchPose(float(row.x), float(row.y), float(row.psi), row.direction)
        for row in frame.itertuples(index=False)
    ]
    length = float(frame["s"].iloc[-1]) if len(frame) else 0.0
    return PlannedPath(poses, length)


def trajectory_frame(traj: Trajectory) -> pd.DataFrame:
    """One row per knot; the final row repeats the last control"""
    controls = np.vstack([traj.controls, traj.controls[-1:]])
    data = np.column_stack([traj.times, traj.wrapped_states(), controls])
    return pd.DataFrame(data, columns=TRAJECTORY_COLUMNS)


def write_trajectory(path: PathLike, traj: Trajectory) -> None:
    trajectory_frame(traj).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_trajectory(path: PathLike, provenance: Provenance = "optimized") -> Trajectory:
    frame = _read_csv(path, TRAJECTORY_COLUMNS)
    if len(frame) < 2:
        raise FileFormatError(path, "a trajectory needs at least two rows")
    times = frame["t"].to_numpy(dtype=float)
    steps = np.diff(times)
    dt = float(steps[0])
    # Six written decimals bound the spacing error
    if not dt > 0 or np.max(np.abs(steps - dt)) > 1e-5:
        raise FileFormatError(path, "timestamps must be evenly spaced and increasing")
    states = frame[TRAJECTORY_COLUMNS[1:7]].to_numpy(dtype=float)
    states[:, 2] = np.unwrap(states[:, 2])
    controls = frame[["tau_u", "tau_r"]].to_numpy(dtype=float)[:-1]
    try:
        return Trajectory.from_arrays(dt, states, controls, provenance)
    except ValueError as error:
        raise FileFormatError(path, str(error)) from error


def tracking_frame(log: TrackingLog) -> pd.DataFrame:
    frame = trajectory_frame(log.executed)
    frame["ref_index"] = np.append(log.ref_indices, log.ref_indices[-1])
    frame["solve_ms"] = np.append(1e3 * log.solve_times, 0.0)
    return frame


def write_tracking_log(path: PathLike, log: TrackingLog) -> None:
    tracking_frame(log).to_csv(path, index=False, float_format=FLOAT_FORMAT)
