"""
Helper functions used in multiple places
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Callable, Iterator, List, Sequence, TypeVar

import numpy as np
from numpy.typing import NDArray


FloatArray = NDArray[np.float64]

T = TypeVar("T")
R = TypeVar("R")

TWO_PI = 2.0 * np.pi


def wrap_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]; angles already in range come back as is"""
    angle = float(angle)
    if -np.pi < angle <= np.pi:
        return angle
    wrapped = math.remainder(angle, TWO_PI)
    return np.pi if wrapped <= -np.pi else wrapped


def wrap_angles(angles: FloatArray) -> FloatArray:
    angles = np.asarray(angles, dtype=float)
    wrapped = angles - TWO_PI * np.round(angles / TWO_PI)
    wrapped = np.where(wrapped <= -np.pi, wrapped + TWO_PI, wrapped)
    wrapped = np.where(wrapped > np.pi, wrapped - TWO_PI, wrapped)
    in_range = (angles > -np.pi) & (angles <= np.pi)
    return np.where(in_range, angles, wrapped)


def polyline_length(points: FloatArray) -> float:
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return 0.0
    return float(np.sum(np.hypot(*np.diff(points, axis=0).T)))


class Stopwatch:
    elapsed: float = 0.0


@contextmanager
def stopwatch() -> Iterator[Stopwatch]:
    watch = Stopwatch()
    start = time.perf_counter()
    try:
        yield watch
    finally:
        watch.elapsed = time.perf_counter() - start


def map_in_threads(
    func: Callable[[T], R], items: Sequence[T], *, max_workers: int = 1
) -> List[R]:
    """
    Apply func to every item, optionally in a thread pool; results keep the
    order of items regardless of completion order.
    """
    if max_workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        return list(executor.map(func, items))
