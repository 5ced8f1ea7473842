"""
Shortest paths for a vehicle with a bounded turning radius that may drive
forwards and backwards, built from the closed-form word families (CSC, CCC,
CCCC, CCSC, CCSCC) and their time-flip, reflection and backwards variants.

Lengths are computed in a frame normalized by the turning radius; a negative
segment length means the segment is driven in reverse.
"""

import math
from typing import Callable, List, NamedTuple, Optional, Tuple

from usvplanner.datatypes import Direction, SearchPose
from usvplanner.helper import wrap_angle


PI = math.pi
HALF_PI = 0.5 * math.pi
ZERO = 10 * 2.220446049250313e-16

Segment = str  # "L", "S" or "R"

# fmt: off
WORDS: Tuple[Tuple[Segment, ...], ...] = (
    ("L", "R", "L"),            # 0
    ("R", "L", "R"),            # 1
    ("L", "R", "L", "R"),       # 2
    ("R", "L", "R", "L"),       # 3
    ("L", "R", "S", "L"),       # 4
    ("R", "L", "S", "R"),       # 5
    ("L", "S", "R", "L"),       # 6
    ("R", "S", "L", "R"),       # 7
    ("L", "R", "S", "R"),       # 8
    ("R", "L", "S", "L"),       # 9
    ("R", "S", "R", "L"),       # 10
    ("L", "S", "L", "R"),       # 11
    ("L", "S", "R"),            # 12
    ("R", "S", "L"),            # 13
    ("L", "S", "L"),            # 14
    ("R", "S", "R"),            # 15
    ("L", "R", "S", "L", "R"),  # 16
    ("R", "L", "S", "R", "L"),  # 17
)
# fmt: on


class ReedsSheppPath(NamedTuple):
    segments: Tuple[Segment, ...]
    lengths: Tuple[float, ...]  # normalized by the turning radius, signed
    radius: float

    @property
    def length(self) -> float:
        return self.radius * sum(abs(length) for length in self.lengths)


class ConnectedPath(NamedTuple):
    poses: List[SearchPose]
    length: float


def _mod2pi(x: float) -> float:
    v = math.fmod(x, 2 * PI)
    if v < -PI:
        v += 2 * PI
    elif v > PI:
        v -= 2 * PI
    return v


def _polar(x: float, y: float) -> Tuple[float, float]:
    return math.hypot(x, y), math.atan2(y, x)


def _tau_omega(
    u: float, v: float, xi: float, eta: float, phi: float
) -> Tuple[float, float]:
    delta = _mod2pi(u - v)
    a = math.sin(u) - math.sin(delta)
    b = math.cos(u) - math.cos(delta) - 1.0
    t1 = math.atan2(eta * a - xi * b, xi * a + eta * b)
    t2 = 2.0 * (math.cos(delta) - math.cos(v) - math.cos(u)) + 3.0
    tau = _mod2pi(t1 + PI) if t2 < 0 else _mod2pi(t1)
    omega = _mod2pi(tau - u + v - phi)
    return tau, omega


Triple = Tuple[float, float, float]
Formula = Callable[[float, float, float], Optional[Triple]]


def _lp_sp_lp(x: float, y: float, phi: float) -> Optional[Triple]:
    u, t = _polar(x - math.sin(phi), y - 1.0 + math.cos(phi))
    if t >= -ZERO:
        v = _mod2pi(phi - t)
        if v >= -ZERO:
            return t, u, v
    return None


def _lp_sp_rp(x: float, y: float, phi: float) -> Optional[Triple]:
    u1, t1 = _polar(x + math.sin(phi), y - 1.0 - math.cos(phi))
    u1 = u1 * u1
    if u1 >= 4.0:
        u = math.sqrt(u1 - 4.0)
        theta = math.atan2(2.0, u)
        t = _mod2pi(t1 + theta)
        v = _mod2pi(t - phi)
        if t >= -ZERO and v >= -ZERO:
            return t, u, v
    return None


def _lp_rm_l(x: float, y: float, phi: float) -> Optional[Triple]:
    xi = x - math.sin(phi)
    eta = y - 1.0 + math.cos(phi)
    u1, theta = _polar(xi, eta)
    if u1 <= 4.0:
        u = -2.0 * math.asin(0.25 * u1)
        t = _mod2pi(theta + 0.5 * u + PI)
        v = _mod2pi(phi - t + u)
        if t >= -ZERO and u <= ZERO:
            return t, u, v
    return None


def _lp_rup_lum_rm(x: float, y: float, phi: float) -> Optional[Triple]:
    xi = x + math.sin(phi)
    eta = y - 1.0 - math.cos(phi)
    rho = 0.25 * (2.0 + math.hypot(xi, eta))
    if rho <= 1.0:
        u = math.acos(rho)
        t, v = _tau_omega(u, -u, xi, eta, phi)
        if t >= -ZERO and v <= ZERO:
            return t, u, v
    return None


def _lp_rum_lum_rp(x: float, y: float, phi: float) -> Optional[Triple]:
    xi = x + math.sin(phi)
    eta = y - 1.0 - math.cos(phi)
    rho = (20.0 - xi * xi - eta * eta) / 16.0
    if 0.0 <= rho <= 1.0:
        u = -math.acos(rho)
        if u >= -HALF_PI:
            t, v = _tau_omega(u, u, xi, eta, phi)
            if t >= -ZERO and v >= -ZERO:
                return t, u, v
    return None


def _lp_rm_sm_lm(x: float, y: float, phi: float) -> Optional[Triple]:
    xi = x - math.sin(phi)
    eta = y - 1.0 + math.cos(phi)
    rho, theta = _polar(xi, eta)
    if rho >= 2.0:
        r = math.sqrt(rho * rho - 4.0)
        u = 2.0 - r
        t = _mod2pi(theta + math.atan2(r, -2.0))
        v = _mod2pi(phi - HALF_PI - t)
        if t >= -ZERO and u <= ZERO and v <= ZERO:
            return t, u, v
    return None


def _lp_rm_sm_rm(x: float, y: float, phi: float) -> Optional[Triple]:
    xi = x + math.sin(phi)
    eta = y - 1.0 - math.cos(phi)
    rho, theta = _polar(-eta, xi)
    if rho >= 2.0:
        t = theta
        u = 2.0 - rho
        v = _mod2pi(t + HALF_PI - phi)
        if t >= -ZERO and u <= ZERO and v <= ZERO:
            return t, u, v
    return None


def _lp_rm_s_lm_rp(x: float, y: float, phi: float) -> Optional[Triple]:
    xi = x + math.sin(phi)
    eta = y - 1.0 - math.cos(phi)
    rho, _ = _polar(xi, eta)
    if rho >= 2.0:
        u = 4.0 - math.sqrt(rho * rho - 4.0)
        if u <= ZERO:
            t = _mod2pi(
                math.atan2((4.0 - u) * xi - 2.0 * eta, -2.0 * xi + (u - 4.0) * eta)
            )
            v = _mod2pi(t - phi)
            if t >= -ZERO and v >= -ZERO:
                return t, u, v
    return None


# A builder maps the (t, u, v) solution of a base formula to segment lengths
Builder = Callable[[float, float, float], Tuple[float, ...]]


def _symmetries(
    formula: Formula,
    x: float,
    y: float,
    phi: float,
    words: Tuple[int, int],
    build: Builder,
    flipped: Builder,
) -> List[Tuple[int, Tuple[float, ...]]]:
    """
    Evaluate a base formula on the pose and its time-flip, reflection and
    combined images; reflected solutions swap left and right turns.
    """
    plain, reflected = words
    found = []
    for word, (px, py, pphi), builder in (
        (plain, (x, y, phi), build),
        (plain, (-x, y, -phi), flipped),
        (reflected, (x, -y, -phi), build),
        (reflected, (-x, -y, phi), flipped),
    ):
        solution = formula(px, py, pphi)
        if solution is not None:
            found.append((word, builder(*solution)))
    return found


def _candidates_normalized(
    x: float, y: float, phi: float
) -> List[Tuple[int, Tuple[float, ...]]]:
    found: List[Tuple[int, Tuple[float, ...]]] = []
    xb = x * math.cos(phi) + y * math.sin(phi)
    yb = x * math.sin(phi) - y * math.cos(phi)

    # fmt: off
    # CSC
    found += _symmetries(
        _lp_sp_lp, x, y, phi, (14, 15),
        lambda t, u, v: (t, u, v), lambda t, u, v: (-t, -u, -v),
    )
    found += _symmetries(
        _lp_sp_rp, x, y, phi, (12, 13),
        lambda t, u, v: (t, u, v), lambda t, u, v: (-t, -u, -v),
    )
    # CCC, forwards and backwards
    found += _symmetries(
        _lp_rm_l, x, y, phi, (0, 1),
        lambda t, u, v: (t, u, v), lambda t, u, v: (-t, -u, -v),
    )
    found += _symmetries(
        _lp_rm_l, xb, yb, phi, (0, 1),
        lambda t, u, v: (v, u, t), lambda t, u, v: (-v, -u, -t),
    )
    # CCCC
    found += _symmetries(
        _lp_rup_lum_rm, x, y, phi, (2, 3),
        lambda t, u, v: (t, u, -u, v), lambda t, u, v: (-t, -u, u, -v),
    )
    found += _symmetries(
        _lp_rum_lum_rp, x, y, phi, (2, 3),
        lambda t, u, v: (t, u, u, v), lambda t, u, v: (-t, -u, -u, -v),
    )
    # CCSC, forwards and backwards
    found += _symmetries(
        _lp_rm_sm_lm, x, y, phi, (4, 5),
        lambda t, u, v: (t, -HALF_PI, u, v), lambda t, u, v: (-t, HALF_PI, -u, -v),
    )
    found += _symmetries(
        _lp_rm_sm_rm, x, y, phi, (8, 9),
        lambda t, u, v: (t, -HALF_PI, u, v), lambda t, u, v: (-t, HALF_PI, -u, -v),
    )
    found += _symmetries(
        _lp_rm_sm_lm, xb, yb, phi, (6, 7),
        lambda t, u, v: (v, u, -HALF_PI, t), lambda t, u, v: (-v, -u, HALF_PI, -t),
    )
    found += _symmetries(
        _lp_rm_sm_rm, xb, yb, phi, (10, 11),
        lambda t, u, v: (v, u, -HALF_PI, t), lambda t, u, v: (-v, -u, HALF_PI, -t),
    )
    # CCSCC
    found += _symmetries(
        _lp_rm_s_lm_rp, x, y, phi, (16, 17),
        lambda t, u, v: (t, -HALF_PI, u, -HALF_PI, v),
        lambda t, u, v: (-t, HALF_PI, -u, HALF_PI, -v),
    )
    # fmt: on
    return found


def _relative_pose(
    start: SearchPose, goal: SearchPose, radius: float
) -> Tuple[float, float, float]:
    dx, dy = goal.x - start.x, goal.y - start.y
    c, s = math.cos(start.psi), math.sin(start.psi)
    return (c * dx + s * dy) / radius, (-s * dx + c * dy) / radius, goal.psi - start.psi


def reeds_shepp_candidates(
    start: SearchPose, goal: SearchPose, radius: float
) -> List[ReedsSheppPath]:
    """Every valid word-family solution, in a fixed order"""
    if not radius > 0:
        raise ValueError(f"turning radius must be positive, got {radius}")
    x, y, phi = _relative_pose(start, goal, radius)
    return [
        ReedsSheppPath(WORDS[word], lengths, radius)
        for word, lengths in _candidates_normalized(x, y, phi)
    ]


def shortest_path(start: SearchPose, goal: SearchPose, radius: float) -> ReedsSheppPath:
    candidates = reeds_shepp_candidates(start, goal, radius)
    # The first strictly shorter candidate wins, keeping ties deterministic
    best = candidates[0]
    for candidate in candidates[1:]:
        if candidate.length < best.length:
            best = candidate
    return best


def reeds_shepp_distance(start: SearchPose, goal: SearchPose, radius: float) -> float:
    return shortest_path(start, goal, radius).length


def _advance(
    x: float, y: float, phi: float, segment: Segment, step: float
) -> Tuple[float, float, float]:
    """Move along one normalized segment by a signed arc length"""
    if segment == "L":
        return (
            x + math.sin(phi + step) - math.sin(phi),
            y - math.cos(phi + step) + math.cos(phi),
            phi + step,
        )
    if segment == "R":
        return (
            x - math.sin(phi - step) + math.sin(phi),
            y + math.cos(phi - step) - math.cos(phi),
            phi - step,
        )
    return x + step * math.cos(phi), y + step * math.sin(phi), phi


def path_endpoint(path: ReedsSheppPath) -> Tuple[float, float, float]:
    """Normalized end pose of a path started at the origin facing +x"""
    x = y = phi = 0.0
    for segment, length in zip(path.segments, path.lengths):
        x, y, phi = _advance(x, y, phi, segment, length)
    return x, y, phi


def sample_path(
    start: SearchPose, path: ReedsSheppPath, step: float
) -> List[SearchPose]:
    """
    Poses along the path every `step` metres of travel (plus every segment
    end), starting with the start pose itself.
    """
    if not step > 0:
        raise ValueError(f"sampling step must be positive, got {step}")
    normalized_step = step / path.radius
    c, s = math.cos(start.psi), math.sin(start.psi)

    def to_world(x: float, y: float, phi: float, direction: Direction) -> SearchPose:
        return SearchPose(
            start.x + path.radius * (c * x - s * y),
            start.y + path.radius * (s * x + c * y),
            wrap_angle(start.psi + phi),
            direction,
        )

    poses = [start]
    x = y = phi = 0.0
    for segment, length in zip(path.segments, path.lengths):
        if abs(length) <= ZERO:
            continue
        direction: Direction = "forward" if length > 0 else "reverse"
        count = max(1, math.ceil(abs(length) / normalized_step - 1e-9))
        increment = length / count
        for _ in range(count):
            x, y, phi = _advance(x, y, phi, segment, increment)
            poses.append(to_world(x, y, phi, direction))
    return poses


def reeds_shepp_connect(
    start: SearchPose, goal: SearchPose, min_turn_radius: float, step: float = 1.0
) -> ConnectedPath:
    path = shortest_path(start, goal, min_turn_radius)
    return ConnectedPath(sample_path(start, path, step), path.length)

