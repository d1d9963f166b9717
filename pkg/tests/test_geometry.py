import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest

from brokenray.geometry import (
    DomainSpec,
    InvalidInputError,
    Obstacle,
    Point2,
    Segment,
    UndefinedTangentError,
    distance_to_box_boundary,
    mirror_reflection_check,
    obstacle_boundary_points,
    on_observation_boundary,
    segment_blocked_by_obstacle,
    segments_properly_intersect,
)

DOM = DomainSpec(512.0)
OBS130 = Obstacle((256.0, 256.0), 130.0)


def seg(ax, ay, bx, by):
    return Segment(Point2(ax, ay), Point2(bx, by))


def test_blocked_through_center():
    assert segment_blocked_by_obstacle(seg(0, 256, 512, 256), OBS130)


def test_not_blocked_along_top_boundary():
    assert not segment_blocked_by_obstacle(seg(0, 512, 512, 512), OBS130)


def _interior_hits(s, obs, samples=200_001):
    # dense sampling of the open segment against the open obstacle square
    t = np.linspace(0.0, 1.0, samples)[1:-1]
    x = s.a.x + t * (s.b.x - s.a.x)
    y = s.a.y + t * (s.b.y - s.a.y)
    inside = (x > obs.xmin) & (x < obs.xmax) & (y > obs.ymin) & (y < obs.ymax)
    on_edge = np.isclose(x, obs.xmin) | np.isclose(x, obs.xmax) | np.isclose(y, obs.ymin) | np.isclose(y, obs.ymax)
    within = (x >= obs.xmin) & (x <= obs.xmax) & (y >= obs.ymin) & (y <= obs.ymax)
    return int(inside.sum()), int((on_edge & within).sum())


def test_leg_ending_on_obstacle_is_not_blocked():
    s = seg(0, 0, 191, 256)
    inside, touching = _interior_hits(s, OBS130)
    assert inside == 0 and touching == 0
    assert not segment_blocked_by_obstacle(s, OBS130)
    assert not segment_blocked_by_obstacle(s.reversed(), OBS130)


def test_grazing_an_edge_blocks():
    # runs along the obstacle's bottom edge between two outside points
    assert segment_blocked_by_obstacle(seg(100, 191, 400, 191), OBS130)
    # clips a corner
    assert segment_blocked_by_obstacle(seg(180, 300, 200, 330), OBS130)


def test_blocked_agrees_with_sampling_on_random_segments():
    rng = np.random.default_rng(7)
    for _ in range(200):
        a, b = rng.uniform(0, 512, 2), rng.uniform(0, 512, 2)
        s = seg(*a, *b)
        inside, _ = _interior_hits(s, OBS130, 20_001)
        if inside:
            assert segment_blocked_by_obstacle(s, OBS130)


def test_blocked_rejects_degenerate_segment():
    with pytest.raises(InvalidInputError):
        segment_blocked_by_obstacle(seg(3, 3, 3, 3), OBS130)


def test_on_observation_boundary():
    assert on_observation_boundary(Point2(0, 100), DOM, 1e-9)
    assert not on_observation_boundary(Point2(256, 256), DOM, 1e-9)
    p = Point2(512 + 5e-10, 10)
    # distance oracle: exact offset of the stored double from the right side
    exact = float(Fraction(p.x) - 512)
    assert exact == pytest.approx(5e-10, rel=1e-4)
    assert distance_to_box_boundary(p, (0, 0, 512, 512)) == exact
    assert on_observation_boundary(p, DOM, 1e-9)
    assert not on_observation_boundary(Point2(512 + 5e-9, 10), DOM, 1e-9)


def test_boundary_points_exclude_vertices():
    obs = Obstacle((10, 10), 8)
    pts = obstacle_boundary_points(obs, 2, exclude_vertices=True)
    assert len(pts) == 16
    assert not set(pts) & set(obs.corners)


def test_boundary_points_with_vertices():
    obs = Obstacle((10, 10), 8)
    pts = obstacle_boundary_points(obs, 2, exclude_vertices=False)
    assert len(pts) == 16
    assert set(obs.corners) <= set(pts)


def test_boundary_point_count_and_placement():
    obs = Obstacle((256, 256), 234)
    pts = obstacle_boundary_points(obs, 4)
    assert len(pts) == math.floor(4 * 234 / 4)
    for p in pts:
        assert distance_to_box_boundary(p, obs.bounds) <= 1e-9 * obs.side
    # consecutive samples are one spacing apart along the perimeter
    steps = [abs(p.x - q.x) + abs(p.y - q.y) for p, q in zip(pts, pts[1:])]
    assert np.allclose(steps, 4)


def test_boundary_points_bad_spacing():
    with pytest.raises(InvalidInputError):
        obstacle_boundary_points(Obstacle((10, 10), 8), 8)


def test_obstacle_must_fit_in_domain():
    Obstacle((256, 256), 364).validate_inside(DOM)
    with pytest.raises(InvalidInputError):
        Obstacle((256, 256), 512).validate_inside(DOM)
    with pytest.raises(InvalidInputError):
        Obstacle((256, 256), -1)


TOP = Point2(256, 321)  # on the top edge of OBS130


def test_mirror_symmetric_angles():
    incoming = seg(TOP.x - 10, TOP.y + 10, TOP.x, TOP.y)
    outgoing = seg(TOP.x, TOP.y, TOP.x + 10, TOP.y + 10)
    assert mirror_reflection_check(incoming, outgoing, TOP, OBS130, 0.02)


def test_mirror_rejects_other_direction():
    incoming = seg(TOP.x - 10, TOP.y + 10, TOP.x, TOP.y)
    outgoing = seg(TOP.x, TOP.y, TOP.x, TOP.y + 10)
    assert not mirror_reflection_check(incoming, outgoing, TOP, OBS130, 0.02)


def test_mirror_half_tolerance_accepted():
    tol = 0.02
    alpha = mpmath.mpf(0.7)
    beta = alpha + mpmath.mpf(tol) / 2
    incoming = seg(TOP.x - 50 * float(mpmath.cos(alpha)), TOP.y + 50 * float(mpmath.sin(alpha)), TOP.x, TOP.y)
    outgoing = seg(TOP.x, TOP.y, TOP.x + 50 * float(mpmath.cos(beta)), TOP.y + 50 * float(mpmath.sin(beta)))
    # high-precision oracle for the angle mismatch
    d_in = (mpmath.mpf(TOP.x) - incoming.a.x, mpmath.mpf(TOP.y) - incoming.a.y)
    d_out = (outgoing.b.x - mpmath.mpf(TOP.x), outgoing.b.y - mpmath.mpf(TOP.y))
    incidence = mpmath.atan2(-d_in[1], d_in[0])
    departure = mpmath.atan2(d_out[1], d_out[0])
    assert abs(abs(departure - incidence) - tol / 2) < 1e-12
    assert mirror_reflection_check(incoming, outgoing, TOP, OBS130, tol)
    beta = alpha + 1.5 * tol
    outgoing = seg(TOP.x, TOP.y, TOP.x + 50 * float(mpmath.cos(beta)), TOP.y + 50 * float(mpmath.sin(beta)))
    assert not mirror_reflection_check(incoming, outgoing, TOP, OBS130, tol)


def test_mirror_on_vertical_edge():
    p = Point2(191, 250)
    incoming = seg(150, 230, 191, 250)
    outgoing = seg(191, 250, 150, 270)
    assert mirror_reflection_check(incoming, outgoing, p, OBS130, 1e-9)


def test_mirror_at_corner_raises():
    c = Point2(OBS130.xmin, OBS130.ymax)
    with pytest.raises(UndefinedTangentError):
        mirror_reflection_check(seg(150, 350, c.x, c.y), seg(c.x, c.y, 150, 400), c, OBS130, 0.02)


def test_mirror_reciprocity():
    rng = np.random.default_rng(3)
    for _ in range(300):
        x = rng.uniform(OBS130.xmin + 1, OBS130.xmax - 1)
        p = Point2(x, OBS130.ymax)
        a = Point2(rng.uniform(0, 512), rng.uniform(330, 512))
        b = Point2(rng.uniform(0, 512), rng.uniform(330, 512))
        incoming, outgoing = seg(*a, *p), seg(*p, *b)
        forward = mirror_reflection_check(incoming, outgoing, p, OBS130, 0.05)
        backward = mirror_reflection_check(outgoing.reversed(), incoming.reversed(), p, OBS130, 0.05)
        assert forward == backward


def test_properly_intersect_examples():
    assert segments_properly_intersect(seg(0, 0, 2, 2), seg(0, 2, 2, 0))
    assert not segments_properly_intersect(seg(0, 0, 1, 1), seg(1, 1, 2, 0))
    assert segments_properly_intersect(seg(0, 0, 2, 0), seg(1, 0, 3, 0))


def test_properly_intersect_edge_cases():
    # T-junction: endpoint of one segment in the middle of the other
    assert segments_properly_intersect(seg(0, 0, 2, 0), seg(1, 0, 1, 5))
    # collinear, touching end to end
    assert not segments_properly_intersect(seg(0, 0, 1, 0), seg(1, 0, 2, 0))
    # parallel, disjoint
    assert not segments_properly_intersect(seg(0, 0, 2, 0), seg(0, 1, 2, 1))
    # identical segments overlap everywhere
    assert segments_properly_intersect(seg(0, 0, 2, 2), seg(2, 2, 0, 0))


def _exact_oracle(s1, s2):
    """Exact rational test: any common point that is not an endpoint of both."""
    (ax, ay), (bx, by) = [(Fraction(v) for v in p) for p in s1]
    (cx, cy), (dx, dy) = [(Fraction(v) for v in p) for p in s2]
    rx, ry, sx, sy = bx - ax, by - ay, dx - cx, dy - cy
    denom = rx * sy - ry * sx
    qx, qy = cx - ax, cy - ay
    ends1 = {(ax, ay), (bx, by)}
    ends2 = {(cx, cy), (dx, dy)}
    if denom == 0:
        if qx * ry - qy * rx != 0:
            return False  # parallel, not collinear
        rr = rx * rx + ry * ry
        t0 = (qx * rx + qy * ry) / rr
        t1 = t0 + (sx * rx + sy * ry) / rr
        lo, hi = max(min(t0, t1), 0), min(max(t0, t1), 1)
        if hi > lo:
            return True
        if hi < lo:
            return False
        pt = (ax + lo * rx, ay + lo * ry)
        return not (pt in ends1 and pt in ends2)
    t = (qx * sy - qy * sx) / denom
    u = (qx * ry - qy * rx) / denom
    if not (0 <= t <= 1 and 0 <= u <= 1):
        return False
    pt = (ax + t * rx, ay + t * ry)
    return not (pt in ends1 and pt in ends2)


def test_properly_intersect_matches_exact_oracle():
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 1000:
        pts = rng.integers(0, 6, size=8)
        s1 = seg(*(float(v) for v in pts[:4]))
        s2 = seg(*(float(v) for v in pts[4:]))
        if s1.length == 0 or s2.length == 0:
            continue
        assert segments_properly_intersect(s1, s2) == _exact_oracle(s1, s2), (s1, s2)
        checked += 1
