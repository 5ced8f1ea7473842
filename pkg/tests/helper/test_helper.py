import math
import threading
import time
from typing import List

import numpy as np
import pytest
from pytest import param as case

from usvplanner.helper import (
    map_in_threads,
    polyline_length,
    stopwatch,
    wrap_angle,
    wrap_angles,
)


@pytest.mark.parametrize(
    "angle, wrapped",
    [
        case(0.0, 0.0, id="zero"),
        case(math.pi, math.pi, id="pi_is_kept"),
        case(-math.pi, math.pi, id="minus_pi_maps_to_pi"),
        case(1.5 * math.pi, -0.5 * math.pi, id="past_pi"),
        case(-2.5 * math.pi, -0.5 * math.pi, id="several_turns"),
        case(7.0, 7.0 - 2 * math.pi, id="one_turn"),
    ],
)
def test_wrap_angle(angle: float, wrapped: float) -> None:
    assert wrap_angle(angle) == pytest.approx(wrapped, abs=1e-12)


@pytest.mark.parametrize("angle", [0.3, -0.3, 1.0, -3.14, 3.0, math.pi, 1e-17])
def test_wrap_angle__identity_in_range(angle: float) -> None:
    assert wrap_angle(angle) == angle
    assert wrap_angles(np.array([angle]))[0] == angle


def test_wrap_angles() -> None:
    angles = np.array([0.0, 3.3, -3.3, 4 * math.pi])

    assert wrap_angles(angles) == pytest.approx(
        [0.0, 3.3 - 2 * math.pi, 2 * math.pi - 3.3, 0.0], abs=1e-12
    )


@pytest.mark.parametrize(
    "points, length",
    [
        case([], 0.0, id="empty"),
        case([[1.0, 1.0]], 0.0, id="single_point"),
        case([[0.0, 0.0], [3.0, 4.0]], 5.0, id="segment"),
        case([[0.0, 0.0], [3.0, 4.0], [3.0, 0.0]], 9.0, id="doubling_back"),
    ],
)
def test_polyline_length(points: List[List[float]], length: float) -> None:
    assert polyline_length(np.array(points)) == pytest.approx(length)


@pytest.mark.parametrize("max_workers", [1, 4])
def test_map_in_threads__keeps_order(max_workers: int) -> None:
    def slow_square(value: int) -> int:
        # Later items finish first
        time.sleep(0.001 * (5 - value))
        return value * value

    assert map_in_threads(slow_square, range(5), max_workers=max_workers) == [
        0,
        1,
        4,
        9,
        16,
    ]


def test_map_in_threads__single_worker_stays_on_caller_thread() -> None:
    threads = map_in_threads(
        lambda _: threading.current_thread(), [1, 2, 3], max_workers=1
    )

    assert set(threads) == {threading.current_thread()}


def test_stopwatch() -> None:
    with stopwatch() as watch:
        assert watch.elapsed == 0.0
        time.sleep(0.01)

    assert watch.elapsed >= 0.01


def test_stopwatch__records_on_error() -> None:
    with pytest.raises(KeyError):
        with stopwatch() as watch:
            time.sleep(0.01)
            raise KeyError("x")

    assert watch.elapsed >= 0.01
