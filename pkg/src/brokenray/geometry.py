"""Planar primitives for a square scan region containing a square reflector.

All predicates work in double precision with an explicit positional
tolerance.  The obstacle is always an axis-aligned square.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

DEFAULT_TOL = 1e-9


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class UndefinedTangentError(InvalidInputError):
    """Raised when a reflection is requested at an obstacle corner."""


class Point2(NamedTuple):
    x: float
    y: float


class Segment(NamedTuple):
    a: Point2
    b: Point2

    @property
    def length(self) -> float:
        return math.hypot(self.b.x - self.a.x, self.b.y - self.a.y)

    def reversed(self) -> "Segment":
        return Segment(self.b, self.a)


@dataclass(frozen=True)
class DomainSpec:
    """Square observation region ``[x0, x0+side] x [y0, y0+side]``."""

    side: float
    origin: Point2 = Point2(0.0, 0.0)

    def __post_init__(self):
        if not self.side > 0:
            raise InvalidInputError(f"domain side must be positive, got {self.side}")
        object.__setattr__(self, "origin", Point2(*self.origin))

    @property
    def xmin(self) -> float:
        return self.origin.x

    @property
    def ymin(self) -> float:
        return self.origin.y

    @property
    def xmax(self) -> float:
        return self.origin.x + self.side

    @property
    def ymax(self) -> float:
        return self.origin.y + self.side

    @property
    def center(self) -> Point2:
        h = self.side / 2
        return Point2(self.origin.x + h, self.origin.y + h)


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned square reflector given by its center and side length."""

    center: Point2
    side: float

    def __post_init__(self):
        if not self.side > 0:
            raise InvalidInputError(f"obstacle side must be positive, got {self.side}")
        object.__setattr__(self, "center", Point2(*self.center))

    @property
    def half(self) -> float:
        return self.side / 2

    @property
    def xmin(self) -> float:
        return self.center.x - self.half

    @property
    def xmax(self) -> float:
        return self.center.x + self.half

    @property
    def ymin(self) -> float:
        return self.center.y - self.half

    @property
    def ymax(self) -> float:
        return self.center.y + self.half

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return self.xmin, self.ymin, self.xmax, self.ymax

    @property
    def corners(self) -> list[Point2]:
        """Corners counterclockwise from the lower-left one."""
        return [
            Point2(self.xmin, self.ymin),
            Point2(self.xmax, self.ymin),
            Point2(self.xmax, self.ymax),
            Point2(self.xmin, self.ymax),
        ]

    def validate_inside(self, dom: DomainSpec) -> None:
        if not (
            self.xmin > dom.xmin
            and self.ymin > dom.ymin
            and self.xmax < dom.xmax
            and self.ymax < dom.ymax
        ):
            raise InvalidInputError("obstacle closure must lie strictly inside the domain")


def _check_segment(seg: Segment) -> None:
    if seg.a[0] == seg.b[0] and seg.a[1] == seg.b[1]:
        raise InvalidInputError(f"degenerate segment at {tuple(seg.a)}")


def blocked_mask(ax, ay, bx, by, bounds, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Vectorised core of :func:`segment_blocked_by_obstacle`.

    Clips every segment against the closed box (Liang-Barsky) and reports
    whether the clipped part reaches farther than ``tol`` from both
    endpoints.  Degenerate segments are reported as not blocked; callers
    validate them separately.
    """
    ax, ay, bx, by = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (ax, ay, bx, by)))
    xmin, ymin, xmax, ymax = bounds
    dx = bx - ax
    dy = by - ay
    t0 = np.zeros(ax.shape)
    t1 = np.ones(ax.shape)
    empty = np.zeros(ax.shape, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for p, q in ((-dx, ax - xmin), (dx, xmax - ax), (-dy, ay - ymin), (dy, ymax - ay)):
            parallel = p == 0
            empty |= parallel & (q < 0)
            r = q / p
            entering = ~parallel & (p < 0)
            leaving = ~parallel & (p > 0)
            t0 = np.where(entering, np.maximum(t0, r), t0)
            t1 = np.where(leaving, np.minimum(t1, r), t1)
    length = np.hypot(dx, dy)
    hit = ~empty & (t0 <= t1)
    return hit & (t1 * length > tol) & ((1.0 - t0) * length > tol)


def segment_blocked_by_obstacle(seg: Segment, obs: Obstacle, tol: float = DEFAULT_TOL) -> bool:
    """True when ``seg`` enters the obstacle anywhere other than at its own endpoints.

    Grazing an edge or passing through a corner counts as blocked; ending
    on the boundary (a reflection point) does not.
    """
    _check_segment(seg)
    (ax, ay), (bx, by) = seg
    return bool(blocked_mask(ax, ay, bx, by, obs.bounds, tol))


def distance_to_box_boundary(p: Point2, bounds) -> float:
    xmin, ymin, xmax, ymax = bounds
    x, y = p
    if xmin <= x <= xmax and ymin <= y <= ymax:
        return min(x - xmin, xmax - x, y - ymin, ymax - y)
    dx = max(xmin - x, 0.0, x - xmax)
    dy = max(ymin - y, 0.0, y - ymax)
    return math.hypot(dx, dy)


def on_observation_boundary(p: Point2, dom: DomainSpec, tol: float = DEFAULT_TOL) -> bool:
    return distance_to_box_boundary(p, (dom.xmin, dom.ymin, dom.xmax, dom.ymax)) <= tol


def _perimeter_point(obs: Obstacle, s: float) -> Point2:
    """Point at arc length ``s`` counterclockwise from the lower-left corner."""
    side = obs.side
    s = s % (4 * side)
    edge, u = divmod(s, side)
    edge = int(edge)
    if edge == 0:
        return Point2(obs.xmin + u, obs.ymin)
    if edge == 1:
        return Point2(obs.xmax, obs.ymin + u)
    if edge == 2:
        return Point2(obs.xmax - u, obs.ymax)
    return Point2(obs.xmin, obs.ymax - u)


def obstacle_boundary_points(
    obs: Obstacle, spacing: float, exclude_vertices: bool = False
) -> list[Point2]:
    """Sample the obstacle boundary at a uniform arc-length spacing.

    Returns ``floor(perimeter / spacing)`` points.  Without vertex exclusion
    the walk starts at the lower-left corner.  With exclusion the start is
    shifted along the boundary until no sample lands on a corner.
    """
    if not 0 < spacing < obs.side:
        raise InvalidInputError(f"spacing must be in (0, {obs.side}), got {spacing}")
    perimeter = 4 * obs.side
    count = int(math.floor(perimeter / spacing + 1e-12))
    offsets = [0.0]
    if exclude_vertices:
        offsets = [spacing * k / 16 for k in (8, 4, 12, 2, 6, 10, 14, 1, 3, 5, 7, 9, 11, 13, 15)]
    tol = 1e-9 * obs.side
    for offset in offsets:
        arcs = [offset + k * spacing for k in range(count)]
        if exclude_vertices and any(
            min(a % obs.side, obs.side - a % obs.side) <= tol for a in arcs
        ):
            continue
        return [_perimeter_point(obs, a) for a in arcs]
    raise InvalidInputError("could not place boundary samples away from the corners")


def obstacle_edge_at(p: Point2, obs: Obstacle, tol: float = DEFAULT_TOL) -> int:
    """Index of the obstacle edge containing ``p`` (0 bottom, 1 right, 2 top, 3 left).

    Raises :class:`UndefinedTangentError` at a corner and
    :class:`InvalidInputError` when ``p`` is not on the boundary.
    """
    x, y = p
    xmin, ymin, xmax, ymax = obs.bounds
    in_x = xmin - tol <= x <= xmax + tol
    in_y = ymin - tol <= y <= ymax + tol
    hits = []
    if in_x and abs(y - ymin) <= tol:
        hits.append(0)
    if in_y and abs(x - xmax) <= tol:
        hits.append(1)
    if in_x and abs(y - ymax) <= tol:
        hits.append(2)
    if in_y and abs(x - xmin) <= tol:
        hits.append(3)
    if not hits:
        raise InvalidInputError(f"point {tuple(p)} is not on the obstacle boundary")
    if len(hits) > 1:
        raise UndefinedTangentError(f"point {tuple(p)} is an obstacle corner")
    return hits[0]


def is_mirror_pair(d_in, d_out, tangent, angle_tol: float) -> bool:
    """Check that ``d_out`` is ``d_in`` reflected across the line along ``tangent``."""
    tx, ty = tangent
    tn = math.hypot(tx, ty)
    tx, ty = tx / tn, ty / tn
    # reflection across the tangent line: keep tangential part, flip normal part
    along = d_in[0] * tx + d_in[1] * ty
    rx = 2 * along * tx - d_in[0]
    ry = 2 * along * ty - d_in[1]
    cross = rx * d_out[1] - ry * d_out[0]
    dot = rx * d_out[0] + ry * d_out[1]
    return abs(math.atan2(cross, dot)) <= angle_tol


_EDGE_TANGENTS = {0: (1.0, 0.0), 1: (0.0, 1.0), 2: (1.0, 0.0), 3: (0.0, 1.0)}


def mirror_reflection_check(
    incoming: Segment,
    outgoing: Segment,
    p: Point2,
    obs: Obstacle,
    angle_tol: float,
    tol: float = DEFAULT_TOL,
) -> bool:
    """True when the path ``incoming -> p -> outgoing`` reflects like a mirror at ``p``."""
    _check_segment(incoming)
    _check_segment(outgoing)
    edge = obstacle_edge_at(p, obs, tol)
    d_in = (p[0] - incoming.a[0], p[1] - incoming.a[1])
    d_out = (outgoing.b[0] - p[0], outgoing.b[1] - p[1])
    return is_mirror_pair(d_in, d_out, _EDGE_TANGENTS[edge], angle_tol)


def domain_tangent_at(p: Point2, dom: DomainSpec, tol: float = DEFAULT_TOL) -> tuple[float, float]:
    """Tangent of the observation boundary at ``p``; corners raise."""
    x, y = p
    on_v = abs(x - dom.xmin) <= tol or abs(x - dom.xmax) <= tol
    on_h = abs(y - dom.ymin) <= tol or abs(y - dom.ymax) <= tol
    if on_v and on_h:
        raise UndefinedTangentError(f"point {tuple(p)} is a domain corner")
    if on_v:
        return (0.0, 1.0)
    if on_h:
        return (1.0, 0.0)
    raise InvalidInputError(f"point {tuple(p)} is not on the observation boundary")


def _orient(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _sign(v: float) -> int:
    return (v > 0) - (v < 0)


def segments_properly_intersect(s1: Segment, s2: Segment) -> bool:
    """True when the segments share any point other than a common endpoint.

    Crossings, T-junctions and collinear overlaps of positive length all
    count; two segments meeting only at an endpoint they both own do not.
    """
    (ax, ay), (bx, by) = s1
    (cx, cy), (dx, dy) = s2
    o1 = _sign(_orient(ax, ay, bx, by, cx, cy))
    o2 = _sign(_orient(ax, ay, bx, by, dx, dy))
    o3 = _sign(_orient(cx, cy, dx, dy, ax, ay))
    o4 = _sign(_orient(cx, cy, dx, dy, bx, by))

    if o1 == 0 and o2 == 0:
        # collinear: compare intervals along the dominant axis
        if abs(bx - ax) >= abs(by - ay):
            lo1, hi1 = sorted((ax, bx))
            lo2, hi2 = sorted((cx, dx))
        else:
            lo1, hi1 = sorted((ay, by))
            lo2, hi2 = sorted((cy, dy))
        return min(hi1, hi2) > max(lo1, lo2)

    if o1 * o2 > 0 or o3 * o4 > 0:
        return False
    if o1 != 0 and o2 != 0 and o3 != 0 and o4 != 0:
        return True
    # touching configuration: the contact point is one of the four endpoints
    ends1 = {(ax, ay), (bx, by)}
    ends2 = {(cx, cy), (dx, dy)}
    if o1 == 0:
        contact = (cx, cy)
    elif o2 == 0:
        contact = (dx, dy)
    elif o3 == 0:
        contact = (ax, ay)
    else:
        contact = (bx, by)
    return not (contact in ends1 and contact in ends2)
