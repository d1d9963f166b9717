import itertools

import numpy as np
import pytest

from brokenray.geometry import (
    DomainSpec,
    InvalidInputError,
    Obstacle,
    Point2,
    Segment,
    mirror_reflection_check,
    on_observation_boundary,
    segment_blocked_by_obstacle,
    segments_properly_intersect,
)
from brokenray.linsys import Grid
from brokenray.rays import (
    AbstractRay,
    AbstractRaySet,
    Ray,
    RaySet,
    Rejection,
    TransceiverLayout,
    abstract_travel_times,
    boundary_transceivers,
    build_ray_set,
    count_max_rays,
    coverage_bitmap_check,
    generate_broken_ray,
    generate_unbroken_ray,
    make_layout,
    partition_abstract_rays,
    read_abstract_set,
    read_ray_set,
    validate_partition,
    write_abstract_set,
    write_ray_set,
)

DOM = DomainSpec(512.0)
OBS = Obstacle((256.0, 256.0), 130.0)
H_BOTTOM = Point2(256.0, 191.0)


def blocked_by_sampling(a, b, obs, samples=4001):
    t = np.linspace(0, 1, samples)[1:-1]
    x = a[0] + t * (b[0] - a[0])
    y = a[1] + t * (b[1] - a[1])
    return bool(np.any((x >= obs.xmin) & (x <= obs.xmax) & (y >= obs.ymin) & (y <= obs.ymax)))


@pytest.fixture(scope="module")
def small_rays():
    layout = make_layout(DOM, OBS, 16, 32.0)
    return build_ray_set(layout, DOM, OBS, 60, 40, seed=3)


def test_transceivers_on_cell_side_midpoints():
    pts = boundary_transceivers(DOM, 64)
    assert len(pts) == 256 == len(set(pts))
    assert all(on_observation_boundary(p, DOM) for p in pts)
    bottom = sorted(p.x for p in pts if p.y == 0)
    assert bottom == [8 * i + 4 for i in range(64)]
    assert len(boundary_transceivers(DOM, 64, per_side=2)) == 512


def test_layout_validation():
    layout = make_layout(DOM, OBS, 8, 16.0)
    layout.validate(DOM, OBS)
    bad = TransceiverLayout(layout.receivers, layout.transmitters, (Point2(256, 256),))
    with pytest.raises(InvalidInputError):
        bad.validate(DOM, OBS)


def test_broken_ray_accepted_below_obstacle():
    layout = TransceiverLayout([(320, 0)], [(200, 0)], [H_BOTTOM])
    ray = generate_broken_ray(np.random.default_rng(0), layout, DOM, OBS)
    assert ray == Ray.broken_via((200, 0), H_BOTTOM, (320, 0))


def test_broken_ray_blocked():
    layout = TransceiverLayout([(320, 0), (256, 512)], [(256, 512), (200, 0)], [H_BOTTOM])
    rng = np.random.default_rng(1)
    outcomes = {}
    for _ in range(200):
        res = generate_broken_ray(rng, layout, DOM, OBS)
        if isinstance(res, Rejection):
            outcomes.setdefault(res, 0)
            outcomes[res] += 1
        else:
            assert res.t == Point2(200, 0) and res.r == Point2(320, 0)
    assert Rejection.BLOCKED in outcomes


def test_broken_ray_specular():
    rng = np.random.default_rng(0)
    mirror = TransceiverLayout([(312, 0)], [(200, 0)], [H_BOTTOM])
    assert isinstance(generate_broken_ray(rng, mirror, DOM, OBS, "specular"), Ray)
    skew = TransceiverLayout([(400, 0)], [(200, 0)], [H_BOTTOM])
    assert generate_broken_ray(rng, skew, DOM, OBS, "specular") is Rejection.NOT_SPECULAR
    assert isinstance(generate_broken_ray(rng, skew, DOM, OBS, "lambertian"), Ray)


def test_two_by_two_by_one_enumeration():
    T = [(150, 0), (200, 0)]
    R = [(310, 0), (360, 0)]
    layout = TransceiverLayout(R, T, [H_BOTTOM])
    n_u, n_b = count_max_rays(layout, OBS)
    oracle_b = sum(
        not blocked_by_sampling(t, H_BOTTOM, OBS) and not blocked_by_sampling(H_BOTTOM, r, OBS)
        for t, r in itertools.product(T, R)
    )
    assert (n_u, n_b) == (4, 4) == (4, oracle_b)
    rs = build_ray_set(layout, DOM, OBS, 4, 0, seed=0)
    assert len(set(rs)) == 4 and rs.shortfall == (0, 0)


def test_unbroken_same_side_accepted():
    layout = TransceiverLayout([(400, 0)], [(20, 0)], [H_BOTTOM])
    ray = generate_unbroken_ray(np.random.default_rng(0), layout, DOM, OBS)
    assert ray == Ray.unbroken((20, 0), (400, 0))
    # the experiment pipeline can opt out of chords lying on the boundary
    other = TransceiverLayout([(400, 0), (500, 512)], [(20, 0)], [H_BOTTOM])
    rng = np.random.default_rng(2)
    seen = {generate_unbroken_ray(rng, other, DOM, OBS, skip_boundary_chords=True) for _ in range(50)}
    assert Ray.unbroken((20, 0), (400, 0)) not in seen
    assert Rejection.DEGENERATE in seen


def test_unbroken_opposite_sides_blocked():
    layout = TransceiverLayout([(256, 512)], [(256, 0)], [H_BOTTOM])
    assert generate_unbroken_ray(np.random.default_rng(0), layout, DOM, OBS) is Rejection.BLOCKED


def test_unbroken_pair_count_matches_oracle():
    small = Obstacle((256, 256), 60)
    trx = [(100, 0), (400, 0), (512, 256), (0, 300)]
    layout = TransceiverLayout(trx, trx, [Point2(256, 226)])
    n_u, _ = count_max_rays(layout, small)
    oracle = sum(t != r and not blocked_by_sampling(t, r, small) for t, r in itertools.product(trx, trx))
    assert n_u == oracle


def test_no_broken_rays_without_reflectors():
    layout = TransceiverLayout([(0, 10)], [(10, 0)], [])
    assert count_max_rays(layout, OBS)[1] == 0
    rs = build_ray_set(layout, DOM, OBS, 5, 0)
    assert len(rs) == 0 and rs.shortfall == (5, 0)


def test_build_empty():
    layout = make_layout(DOM, OBS, 8, 16.0)
    assert len(build_ray_set(layout, DOM, OBS, 0, 0)) == 0


def test_build_is_deterministic():
    layout = make_layout(DOM, OBS, 16, 32.0)
    a = build_ray_set(layout, DOM, OBS, 300, 200, seed=9)
    b = build_ray_set(layout, DOM, OBS, 300, 200, seed=9)
    c = build_ray_set(layout, DOM, OBS, 300, 200, seed=10)
    assert a.rays == b.rays
    assert a.rays != c.rays


def test_saturation_reports_shortfall():
    layout = TransceiverLayout([(310, 0), (360, 0)], [(150, 0), (200, 0)], [H_BOTTOM])
    rs = build_ray_set(layout, DOM, OBS, 10, 0, seed=1)
    assert rs.counts == (4, 0)
    assert rs.shortfall == (6, 0)
    assert rs.requested == (10, 0)


def test_enumeration_fallback_returns_every_ray():
    layout = make_layout(DOM, OBS, 8, 32.0)
    n_u, n_b = count_max_rays(layout, OBS)
    rs = build_ray_set(layout, DOM, OBS, n_b + 100, n_u + 100, seed=2)
    assert rs.counts == (n_b, n_u)
    assert rs.shortfall == (100, 100)


def test_generated_rays_respect_invariants(small_rays):
    assert small_rays.counts == (60, 40)
    for ray in small_rays:
        for leg in ray.legs:
            assert leg.length > 0
            assert not segment_blocked_by_obstacle(leg, OBS)
        if ray.broken:
            a, b = ray.legs
            assert not segments_properly_intersect(a, b)


def test_specular_rays_are_lambertian_rays():
    layout = make_layout(DOM, OBS, 16, 8.0, exclude_vertices=True)
    spec = build_ray_set(layout, DOM, OBS, 80, 0, model="specular", seed=4)
    lamb_ok = count_max_rays(layout, OBS)[1]
    assert lamb_ok > 0
    for ray in spec:
        assert not segment_blocked_by_obstacle(Segment(ray.t, ray.h), OBS)
        assert not segment_blocked_by_obstacle(Segment(ray.h, ray.r), OBS)
        assert mirror_reflection_check(Segment(ray.t, ray.h), Segment(ray.h, ray.r), ray.h, OBS, 0.02)


def test_duplicate_rays_rejected():
    ray = Ray.unbroken((0, 4), (512, 4))
    with pytest.raises(InvalidInputError):
        RaySet([ray, ray])
    # the reverse path is a different ray
    assert len(RaySet([ray, ray.reversed()])) == 2


def test_partition_shared_endpoint():
    a = Ray.unbroken((0, 100), (300, 512))
    b = Ray.unbroken((300, 512), (512, 50))
    for mode in ("chained", "free"):
        aset = partition_abstract_rays([a, b], mode)
        assert len(aset) == 1 and len(aset[0]) == 2


def test_partition_crossing_rays():
    a = Ray.unbroken((0, 0), (512, 512))
    b = Ray.unbroken((0, 512), (512, 0))
    for mode in ("chained", "free"):
        aset = partition_abstract_rays([a, b], mode)
        assert len(aset) == 2


def test_partition_random_rays(small_rays):
    free = partition_abstract_rays(small_rays, "free")
    validate_partition(free, small_rays.rays)
    assert len(free) < len(small_rays)
    chained = partition_abstract_rays(small_rays, "chained")
    validate_partition(chained, small_rays.rays)
    for ar in chained:
        for x, y in zip(ar.elements, ar.elements[1:]):
            assert x.r == y.t


def test_partition_with_grid_keeps_members_apart(small_rays):
    grid = Grid.covering(DOM, 16)
    aset = partition_abstract_rays(small_rays, "free", grid=grid)
    validate_partition(aset, small_rays.rays)
    from brokenray.linsys import cell_traversal

    for ar in aset:
        cells = [{c for leg in ray.legs for c, _ in cell_traversal(leg, grid)} for ray in ar.elements]
        for i in range(len(cells)):
            for j in range(i + 1, len(cells)):
                assert not cells[i] & cells[j]


def test_partition_rejects_empty_and_unknown_mode(small_rays):
    with pytest.raises(InvalidInputError):
        partition_abstract_rays([], "free")
    with pytest.raises(InvalidInputError):
        partition_abstract_rays(small_rays, "sideways")


def test_abstract_travel_times():
    a = Ray.unbroken((0, 100), (300, 512))
    b = Ray.unbroken((300, 512), (512, 50))
    single = AbstractRaySet([AbstractRay((a,), (0,))], 1)
    assert abstract_travel_times(single, [0.7])[0] == 0.7
    pair = AbstractRaySet([AbstractRay((a, b), (0, 1))], 2)
    assert abstract_travel_times(pair, [0.2, 0.3])[0] == pytest.approx(0.5)
    with pytest.raises(InvalidInputError):
        abstract_travel_times(pair, [0.2])


def test_abstract_travel_times_conserve_total(small_rays):
    P = np.random.default_rng(0).uniform(1, 10, len(small_rays))
    aset = partition_abstract_rays(small_rays, "free")
    assert abstract_travel_times(aset, P).sum() == pytest.approx(P.sum(), rel=1e-13)


def test_coverage_bitmap(small_rays):
    aset = partition_abstract_rays(small_rays, "free")
    assert coverage_bitmap_check(aset, small_rays) == (True, [])
    complete, missing = coverage_bitmap_check(AbstractRaySet([], 0), small_rays)
    assert not complete and missing == list(range(len(small_rays)))

    rng = np.random.default_rng(5)
    keep = sorted(rng.choice(len(small_rays), len(small_rays) // 2, replace=False).tolist())
    half = AbstractRaySet([AbstractRay((small_rays[i],), (i,)) for i in keep], len(small_rays))
    complete, missing = coverage_bitmap_check(half, small_rays)
    oracle = [i for i in range(len(small_rays)) if i not in keep]
    assert not complete and missing == oracle


def test_ray_file_round_trip(tmp_path, small_rays):
    path = tmp_path / "rays.txt"
    write_ray_set(path, small_rays)
    back = read_ray_set(path)
    assert back.rays == small_rays.rays
    text = path.read_text()
    path.write_text("# header\n\n" + text)
    assert read_ray_set(path).rays == small_rays.rays


def test_ray_file_errors(tmp_path):
    path = tmp_path / "rays.txt"
    path.write_text("U 0 1 2 3\nB 0 1 2\n")
    with pytest.raises(InvalidInputError, match=":2:"):
        read_ray_set(path)
    path.write_text("X 0 1 2 3\n")
    with pytest.raises(InvalidInputError):
        read_ray_set(path)


def test_abstract_file_round_trip(tmp_path, small_rays):
    aset = partition_abstract_rays(small_rays, "free")
    path = tmp_path / "abstract.txt"
    write_abstract_set(path, aset)
    back = read_abstract_set(path, small_rays)
    assert [ar.indices for ar in back] == [ar.indices for ar in aset]
    path.write_text(f"A 1 {len(small_rays)}\n")
    with pytest.raises(InvalidInputError, match="out of range"):
        read_abstract_set(path, small_rays)
    path.write_text("A 2 1\n")
    with pytest.raises(InvalidInputError):
        read_abstract_set(path, small_rays)
