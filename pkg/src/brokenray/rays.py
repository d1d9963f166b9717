"""Ray synthesis, abstract rays, and coverage bookkeeping.

A ray runs from a transmitter on the observation boundary to a receiver,
either straight or via one reflection point on the obstacle boundary.
Abstract rays bundle several rays that do not cross into a single
equation whose travel time is the sum of the members' times.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from brokenray import _kernels
from brokenray.geometry import (
    DEFAULT_TOL,
    DomainSpec,
    InvalidInputError,
    Obstacle,
    Point2,
    Segment,
    UndefinedTangentError,
    blocked_mask,
    domain_tangent_at,
    is_mirror_pair,
    mirror_reflection_check,
    obstacle_boundary_points,
    on_observation_boundary,
    segment_blocked_by_obstacle,
    segments_properly_intersect,
)

log = logging.getLogger(__name__)

DEFAULT_ANGLE_TOL = 0.02
ATTEMPT_FACTOR = 50


class NoValidRayError(InvalidInputError):
    """No admissible ray exists for the given layout."""


class Rejection(enum.Enum):
    BLOCKED = "blocked"
    NOT_SPECULAR = "not-specular"
    DEGENERATE = "degenerate"


class Ray(NamedTuple):
    """Transmitter ``t``, receiver ``r`` and, for broken rays, reflection point ``h``."""

    t: Point2
    r: Point2
    h: Point2 | None = None

    @property
    def broken(self) -> bool:
        return self.h is not None

    @property
    def legs(self) -> list[Segment]:
        if self.h is None:
            return [Segment(self.t, self.r)]
        return [Segment(self.t, self.h), Segment(self.h, self.r)]

    @property
    def length(self) -> float:
        return sum(s.length for s in self.legs)

    def reversed(self) -> "Ray":
        return Ray(self.r, self.t, self.h)

    def to_line(self) -> str:
        pts = (self.t, self.r) if self.h is None else (self.t, self.h, self.r)
        coords = " ".join(repr(float(v)) for p in pts for v in p)
        return ("U " if self.h is None else "B ") + coords

    @classmethod
    def unbroken(cls, t, r) -> "Ray":
        return cls(Point2(*t), Point2(*r))

    @classmethod
    def broken_via(cls, t, h, r) -> "Ray":
        return cls(Point2(*t), Point2(*r), Point2(*h))


@dataclass(frozen=True)
class TransceiverLayout:
    receivers: tuple[Point2, ...]
    transmitters: tuple[Point2, ...]
    obstacle_points: tuple[Point2, ...]

    def __post_init__(self):
        for name in ("receivers", "transmitters", "obstacle_points"):
            object.__setattr__(self, name, tuple(Point2(*p) for p in getattr(self, name)))

    def validate(self, dom: DomainSpec, obs: Obstacle, tol: float = DEFAULT_TOL) -> None:
        for p in self.receivers + self.transmitters:
            if not on_observation_boundary(p, dom, tol):
                raise InvalidInputError(f"transceiver {tuple(p)} is not on the observation boundary")
        xmin, ymin, xmax, ymax = obs.bounds
        for p in self.obstacle_points:
            inside = xmin - tol <= p.x <= xmax + tol and ymin - tol <= p.y <= ymax + tol
            near = min(abs(p.x - xmin), abs(p.x - xmax), abs(p.y - ymin), abs(p.y - ymax)) <= tol
            if not (inside and near):
                raise InvalidInputError(f"reflection point {tuple(p)} is not on the obstacle boundary")


def boundary_transceivers(dom: DomainSpec, n: int, per_side: int = 1) -> list[Point2]:
    """Points at the centers of the boundary cell sides of an ``n x n`` grid.

    With ``per_side > 1`` every boundary cell side carries that many evenly
    spaced points.  The walk goes counterclockwise from the lower-left corner.
    """
    if n < 1 or per_side < 1:
        raise InvalidInputError("grid size and density must be positive")
    d = dom.side / n
    offsets = [(k + 0.5) / per_side * d for k in range(per_side)]
    along = [i * d + o for i in range(n) for o in offsets]
    x0, y0, x1, y1 = dom.xmin, dom.ymin, dom.xmax, dom.ymax
    pts = [Point2(x0 + a, y0) for a in along]
    pts += [Point2(x1, y0 + a) for a in along]
    pts += [Point2(x1 - a, y1) for a in along]
    pts += [Point2(x0, y1 - a) for a in along]
    return pts


def make_layout(dom: DomainSpec, obs: Obstacle, grid_n: int, spacing: float,
                exclude_vertices: bool = False, per_side: int = 1) -> TransceiverLayout:
    """Transceivers on every boundary cell side; reflection points on the obstacle."""
    trx = boundary_transceivers(dom, grid_n, per_side)
    hpts = obstacle_boundary_points(obs, spacing, exclude_vertices)
    return TransceiverLayout(tuple(trx), tuple(trx), tuple(hpts))


def _xy(points: Sequence[Point2]) -> np.ndarray:
    return np.array(points, dtype=float).reshape(-1, 2)


def _obstacle_edges(hpts: np.ndarray, obs: Obstacle, tol: float) -> np.ndarray:
    """Edge id (0 bottom, 1 right, 2 top, 3 left) per point; -1 at corners."""
    x, y = hpts[:, 0], hpts[:, 1]
    xmin, ymin, xmax, ymax = obs.bounds
    hits = np.stack([
        np.abs(y - ymin) <= tol,
        np.abs(x - xmax) <= tol,
        np.abs(y - ymax) <= tol,
        np.abs(x - xmin) <= tol,
    ])
    edge = np.argmax(hits, axis=0)
    return np.where(hits.sum(axis=0) == 1, edge, -1)


def _along_boundary(ax, ay, bx, by, dom: DomainSpec, tol: float):
    """Chords whose endpoints sit on the same side of the observation square."""
    out = np.zeros(np.broadcast(ax, bx, ay, by).shape, dtype=bool)
    for a, b, edge in ((ax, bx, dom.xmin), (ax, bx, dom.xmax), (ay, by, dom.ymin), (ay, by, dom.ymax)):
        out |= (np.abs(a - edge) <= tol) & (np.abs(b - edge) <= tol)
    return out


class RayCatalog:
    """Admissibility tables for every pair and triple of a layout.

    ``pair_ok[t, r]`` marks admissible unbroken rays; a broken triple is
    admissible when ``leg_in[t, h]`` and ``leg_out[h, r]`` hold, the legs do
    not fold back onto each other and, for the specular model, the
    reflection at ``h`` is mirror-like.  Given ``skip_chords_on``, unbroken
    chords lying along one side of that domain are not admissible.
    """

    def __init__(self, layout: TransceiverLayout, obs: Obstacle, model: str = "lambertian",
                 angle_tol: float = DEFAULT_ANGLE_TOL, tol: float = DEFAULT_TOL,
                 skip_chords_on: DomainSpec | None = None):
        if model not in ("lambertian", "specular"):
            raise InvalidInputError(f"unknown reflection model {model!r}")
        self.layout = layout
        self.obs = obs
        self.model = model
        self.angle_tol = angle_tol
        self.tol = tol
        self.T = _xy(layout.transmitters)
        self.R = _xy(layout.receivers)
        self.H = _xy(layout.obstacle_points)
        b = obs.bounds
        T, R, H = self.T, self.R, self.H

        tx, rx = T[:, None, 0], R[None, :, 0]
        ty, ry = T[:, None, 1], R[None, :, 1]
        same = (tx == rx) & (ty == ry)
        self.pair_ok = ~same & ~blocked_mask(tx, ty, rx, ry, b, tol)
        if skip_chords_on is not None:
            self.pair_ok &= ~_along_boundary(tx, ty, rx, ry, skip_chords_on, tol)

        hx, hy = H[None, :, 0], H[None, :, 1]
        t_at_h = (T[:, None, 0] == hx) & (T[:, None, 1] == hy)
        self.leg_in = ~t_at_h & ~blocked_mask(T[:, None, 0], T[:, None, 1], hx, hy, b, tol)
        r_at_h = (H[:, None, 0] == R[None, :, 0]) & (H[:, None, 1] == R[None, :, 1])
        self.leg_out = ~r_at_h & ~blocked_mask(H[:, None, 0], H[:, None, 1], R[None, :, 0], R[None, :, 1], b, tol)
        self.h_edge = _obstacle_edges(H, obs, tol) if len(H) else np.zeros(0, dtype=int)

    def broken_ok(self, it, ih, ir) -> np.ndarray:
        """Vectorised admissibility of index triples (transmitter, reflection, receiver)."""
        it, ih, ir = np.broadcast_arrays(np.asarray(it), np.asarray(ih), np.asarray(ir))
        ok = self.leg_in[it, ih] & self.leg_out[ih, ir]
        vin = self.T[it] - self.H[ih]
        vout = self.R[ir] - self.H[ih]
        cross = vin[..., 0] * vout[..., 1] - vin[..., 1] * vout[..., 0]
        dot = vin[..., 0] * vout[..., 0] + vin[..., 1] * vout[..., 1]
        scale = np.hypot(vin[..., 0], vin[..., 1]) * np.hypot(vout[..., 0], vout[..., 1])
        folded = (np.abs(cross) <= self.tol * np.maximum(scale, 1.0)) & (dot > 0)
        ok &= ~folded
        if self.model == "specular":
            ok &= self.specular_ok(it, ih, ir)
        return ok

    def specular_ok(self, it, ih, ir) -> np.ndarray:
        edge = self.h_edge[ih]
        d_in = self.H[ih] - self.T[it]
        d_out = self.R[ir] - self.H[ih]
        horizontal = (edge == 0) | (edge == 2)
        # mirror across a horizontal edge flips y; across a vertical edge flips x
        mx = np.where(horizontal, d_in[..., 0], -d_in[..., 0])
        my = np.where(horizontal, -d_in[..., 1], d_in[..., 1])
        ang = np.abs(np.arctan2(mx * d_out[..., 1] - my * d_out[..., 0],
                                mx * d_out[..., 0] + my * d_out[..., 1]))
        return (edge >= 0) & (ang <= self.angle_tol)

    @property
    def n_unbroken(self) -> int:
        return int(self.pair_ok.sum())

    @property
    def n_broken(self) -> int:
        return int(sum(len(a) for a, _, _ in self._broken_blocks()))

    def _broken_blocks(self):
        for ih in range(len(self.H)):
            ts = np.nonzero(self.leg_in[:, ih])[0]
            rs = np.nonzero(self.leg_out[ih, :])[0]
            if not len(ts) or not len(rs):
                continue
            it = np.repeat(ts, len(rs))
            ir = np.tile(rs, len(ts))
            keep = self.broken_ok(it, ih, ir)
            yield it[keep], np.full(int(keep.sum()), ih), ir[keep]

    def all_broken(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        blocks = list(self._broken_blocks())
        if not blocks:
            e = np.zeros(0, dtype=np.int64)
            return e, e, e
        return tuple(np.concatenate(parts) for parts in zip(*blocks))

    def all_unbroken(self) -> tuple[np.ndarray, np.ndarray]:
        it, ir = np.nonzero(self.pair_ok)
        return it, ir

    def broken_ray(self, it: int, ih: int, ir: int) -> Ray:
        L = self.layout
        return Ray(L.transmitters[it], L.receivers[ir], L.obstacle_points[ih])

    def unbroken_ray(self, it: int, ir: int) -> Ray:
        L = self.layout
        return Ray(L.transmitters[it], L.receivers[ir])


@lru_cache(maxsize=16)
def catalog_for(layout: TransceiverLayout, obs: Obstacle, model: str = "lambertian",
                angle_tol: float = DEFAULT_ANGLE_TOL, tol: float = DEFAULT_TOL,
                skip_chords_on: DomainSpec | None = None) -> RayCatalog:
    return RayCatalog(layout, obs, model, angle_tol, tol, skip_chords_on)


def _check_broken(t: Point2, h: Point2, r: Point2, obs: Obstacle, model: str,
                  angle_tol: float, tol: float) -> Ray | Rejection:
    if t == h or h == r:
        return Rejection.DEGENERATE
    leg1, leg2 = Segment(t, h), Segment(h, r)
    if segment_blocked_by_obstacle(leg1, obs, tol) or segment_blocked_by_obstacle(leg2, obs, tol):
        return Rejection.BLOCKED
    if segments_properly_intersect(leg1, leg2):
        return Rejection.DEGENERATE
    if model == "specular":
        try:
            if not mirror_reflection_check(leg1, leg2, h, obs, angle_tol, tol):
                return Rejection.NOT_SPECULAR
        except UndefinedTangentError:
            return Rejection.NOT_SPECULAR
    return Ray(t, r, h)


def generate_broken_ray(rng: np.random.Generator, layout: TransceiverLayout, dom: DomainSpec,
                        obs: Obstacle, model: str = "lambertian",
                        angle_tol: float = DEFAULT_ANGLE_TOL,
                        tol: float = DEFAULT_TOL) -> Ray | Rejection:
    """Draw one (receiver, transmitter, reflection point) triple and test it.

    Returns the ray, or the reason it was rejected.  Raises
    :class:`NoValidRayError` when one of the point sets is empty, so no
    triple can be drawn; :func:`build_ray_set` detects exhaustion of the
    admissible triples and reports it as a shortfall.
    """
    if not (layout.receivers and layout.transmitters and layout.obstacle_points):
        raise NoValidRayError("layout needs receivers, transmitters and reflection points")
    ir = int(rng.integers(len(layout.receivers)))
    it = int(rng.integers(len(layout.transmitters)))
    ih = int(rng.integers(len(layout.obstacle_points)))
    t, h, r = layout.transmitters[it], layout.obstacle_points[ih], layout.receivers[ir]
    return _check_broken(t, h, r, obs, model, angle_tol, tol)


def generate_unbroken_ray(rng: np.random.Generator, layout: TransceiverLayout, dom: DomainSpec,
                          obs: Obstacle, tol: float = DEFAULT_TOL,
                          skip_boundary_chords: bool = False) -> Ray | Rejection:
    """Draw one (receiver, transmitter) pair and test it.

    With ``skip_boundary_chords`` a pair on the same side of ``dom`` is
    rejected as degenerate: such a chord runs along the boundary itself.
    """
    skip = dom if skip_boundary_chords else None
    if not (layout.receivers and layout.transmitters):
        raise NoValidRayError("layout needs receivers and transmitters")
    ir = int(rng.integers(len(layout.receivers)))
    it = int(rng.integers(len(layout.transmitters)))
    t, r = layout.transmitters[it], layout.receivers[ir]
    if t == r or (skip is not None and _along_boundary(t.x, t.y, r.x, r.y, skip, tol)):
        return Rejection.DEGENERATE
    if segment_blocked_by_obstacle(Segment(t, r), obs, tol):
        return Rejection.BLOCKED
    return Ray(t, r)


def count_max_rays(layout: TransceiverLayout, obs: Obstacle, dom: DomainSpec | None = None,
                   tol: float = DEFAULT_TOL, skip_boundary_chords: bool = False) -> tuple[int, int]:
    """Number of admissible unbroken pairs and Lambertian broken triples."""
    if skip_boundary_chords and dom is None:
        raise InvalidInputError("skipping boundary chords needs the domain")
    cat = RayCatalog(layout, obs, "lambertian", DEFAULT_ANGLE_TOL, tol,
                     dom if skip_boundary_chords else None)
    return cat.n_unbroken, cat.n_broken


@dataclass
class RaySet:
    rays: list[Ray]
    seed: int | None = None
    requested: tuple[int, int] = (0, 0)
    shortfall: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if len(set(self.rays)) != len(self.rays):
            raise InvalidInputError("ray set contains duplicate rays")

    def __len__(self) -> int:
        return len(self.rays)

    def __iter__(self):
        return iter(self.rays)

    def __getitem__(self, i):
        return self.rays[i]

    @property
    def counts(self) -> tuple[int, int]:
        nb = sum(1 for r in self.rays if r.h is not None)
        return nb, len(self.rays) - nb


def _sample_unique(rng, n: int, draw, accept, enumerate_all) -> tuple[list[tuple], int]:
    """Rejection-sample ``n`` distinct index tuples, then fall back to enumeration.

    Returns the tuples in acceptance order and the shortfall.
    """
    chosen: dict[tuple, None] = {}
    if n <= 0:
        return [], 0
    cap = ATTEMPT_FACTOR * n
    attempts = 0
    while len(chosen) < n and attempts < cap:
        batch = min(cap - attempts, max(1024, 2 * (n - len(chosen))))
        idx = draw(batch)
        attempts += batch
        ok = accept(*idx)
        for key in zip(*(a[ok].tolist() for a in idx)):
            if key not in chosen:
                chosen[key] = None
                if len(chosen) == n:
                    break
    if len(chosen) < n:
        every = enumerate_all()
        rest = [key for key in zip(*(a.tolist() for a in every)) if key not in chosen]
        for j in rng.permutation(len(rest)):
            chosen[rest[j]] = None
            if len(chosen) == n:
                break
    return list(chosen), n - len(chosen)


def build_ray_set(layout: TransceiverLayout, dom: DomainSpec, obs: Obstacle, n_b: int, n_u: int,
                  model: str = "lambertian", seed: int = 0,
                  angle_tol: float = DEFAULT_ANGLE_TOL, tol: float = DEFAULT_TOL,
                  skip_boundary_chords: bool = False) -> RaySet:
    """Generate ``n_b`` distinct broken and ``n_u`` distinct unbroken rays, shuffled.

    When fewer admissible rays exist than requested, every admissible ray
    is returned and the missing counts are kept in ``RaySet.shortfall``.
    ``skip_boundary_chords`` drops unbroken chords lying along one side of
    ``dom``.
    """
    if n_b < 0 or n_u < 0:
        raise InvalidInputError("ray counts must be nonnegative")
    skip = dom if skip_boundary_chords else None
    rng = np.random.default_rng(seed)
    nt, nr, nh = len(layout.transmitters), len(layout.receivers), len(layout.obstacle_points)
    broken: list[tuple] = []
    short_b = short_u = 0
    if n_b:
        if not (nt and nr and nh):
            short_b = n_b
        else:
            cat = catalog_for(layout, obs, model, angle_tol, tol, skip)
            broken, short_b = _sample_unique(
                rng, n_b,
                lambda k: (rng.integers(nt, size=k), rng.integers(nh, size=k), rng.integers(nr, size=k)),
                cat.broken_ok,
                cat.all_broken,
            )
    unbroken: list[tuple] = []
    if n_u:
        if not (nt and nr):
            short_u = n_u
        else:
            cat = catalog_for(layout, obs, model, angle_tol, tol, skip)
            unbroken, short_u = _sample_unique(
                rng, n_u,
                lambda k: (rng.integers(nt, size=k), rng.integers(nr, size=k)),
                lambda it, ir: cat.pair_ok[it, ir],
                cat.all_unbroken,
            )
    T, R, H = layout.transmitters, layout.receivers, layout.obstacle_points
    rays = [Ray(T[it], R[ir], H[ih]) for it, ih, ir in broken]
    rays += [Ray(T[it], R[ir]) for it, ir in unbroken]
    rays = [rays[i] for i in rng.permutation(len(rays))]
    if short_b or short_u:
        log.info("ray budget saturated: %d broken and %d unbroken rays unavailable", short_b, short_u)
    return RaySet(rays, seed, (n_b, n_u), (short_b, short_u))


@dataclass
class AbstractRay:
    """Rays that pairwise meet at most at endpoints, used as one equation.

    ``indices`` point into the source :class:`RaySet`.
    """

    elements: tuple[Ray, ...]
    indices: tuple[int, ...]
    mode: str = "free"

    def __len__(self) -> int:
        return len(self.elements)

    @property
    def segments(self) -> list[Segment]:
        return [s for ray in self.elements for s in ray.legs]


@dataclass
class AbstractRaySet:
    abstract_rays: list[AbstractRay] = field(default_factory=list)
    source_size: int = 0

    def __len__(self) -> int:
        return len(self.abstract_rays)

    def __iter__(self):
        return iter(self.abstract_rays)

    def __getitem__(self, i):
        return self.abstract_rays[i]


def _segment_array(rays: Sequence[Ray]) -> tuple[np.ndarray, np.ndarray]:
    segs = np.zeros((len(rays), 2, 4))
    nsegs = np.empty(len(rays), dtype=np.int64)
    for i, ray in enumerate(rays):
        legs = ray.legs
        nsegs[i] = len(legs)
        for k, ((ax, ay), (bx, by)) in enumerate(legs):
            segs[i, k] = (ax, ay, bx, by)
    return segs, nsegs


def _ray_cells(rays: Sequence[Ray], grid) -> tuple[np.ndarray, np.ndarray]:
    """CSR lists of the grid cells each ray passes through."""
    legs, row_ptr = [], [0]
    for ray in rays:
        for (ax, ay), (bx, by) in ray.legs:
            legs.append((ax, ay, bx, by))
        row_ptr.append(len(legs))
    legs_arr = np.array(legs, dtype=float).reshape(-1, 4)
    ptr, idx, _ = _kernels.assemble_rows(
        legs_arr, np.zeros(len(legs), dtype=np.int64), np.array(row_ptr, dtype=np.int64),
        grid.origin.x, grid.origin.y, grid.cell_size, grid.n, np.zeros(grid.n_cells, dtype=np.bool_),
    )
    return ptr, idx


def _crosses_any(cand: Ray, segs: list[Segment]) -> bool:
    return any(segments_properly_intersect(a, b) for a in cand.legs for b in segs)


def _chain_mirror_ok(first: Ray, second: Ray, dom: DomainSpec, angle_tol: float) -> bool:
    """Mirror check where ``first`` ends and ``second`` starts on the boundary."""
    p = first.r
    last_leg = first.legs[-1]
    next_leg = second.legs[0]
    try:
        tangent = domain_tangent_at(p, dom)
    except UndefinedTangentError:
        return False
    d_in = (p.x - last_leg.a.x, p.y - last_leg.a.y)
    d_out = (next_leg.b.x - p.x, next_leg.b.y - p.y)
    return is_mirror_pair(d_in, d_out, tangent, angle_tol)


def _cells_at(p: Point2, grid, eps: float = 1e-9) -> set[int]:
    """Cells whose closed square contains ``p``."""
    out = set()
    u = (p.x - grid.origin.x) / grid.cell_size
    v = (p.y - grid.origin.y) / grid.cell_size
    for col in {math.floor(u - eps), math.floor(u + eps)}:
        for row in {math.floor(v - eps), math.floor(v + eps)}:
            if 0 <= col < grid.n and 0 <= row < grid.n:
                out.add(row * grid.n + col)
    return out


def _chained_partition(rays: Sequence[Ray], specular_chaining: bool, dom: DomainSpec | None,
                       angle_tol: float, max_elements: int | None, grid=None) -> list[list[int]]:
    if specular_chaining and dom is None:
        raise InvalidInputError("specular chaining needs the domain for boundary tangents")
    cells = None
    if grid is not None:
        ptr, idx = _ray_cells(rays, grid)
        cells = [set(idx[ptr[i]:ptr[i + 1]].tolist()) for i in range(len(rays))]

    def disjoint(j: int, taken: set[int], joint: Point2) -> bool:
        return cells is None or (cells[j] & taken) <= _cells_at(joint, grid)
    by_t: dict[Point2, list[int]] = {}
    by_r: dict[Point2, list[int]] = {}
    for i, ray in enumerate(rays):
        by_t.setdefault(ray.t, []).append(i)
        by_r.setdefault(ray.r, []).append(i)
    used = [False] * len(rays)
    limit = max_elements or len(rays)
    groups = []
    for seed in range(len(rays)):
        if used[seed]:
            continue
        used[seed] = True
        chain = [seed]
        segs = list(rays[seed].legs)
        taken = set(cells[seed]) if cells is not None else set()
        grew = True
        while grew and len(chain) < limit:
            grew = False
            # extend at the end: next ray starts where the chain ends
            for j in by_t.get(rays[chain[-1]].r, ()):
                if used[j]:
                    continue
                if specular_chaining and not _chain_mirror_ok(rays[chain[-1]], rays[j], dom, angle_tol):
                    continue
                if _crosses_any(rays[j], segs) or not disjoint(j, taken, rays[j].t):
                    continue
                used[j] = True
                chain.append(j)
                segs.extend(rays[j].legs)
                if cells is not None:
                    taken |= cells[j]
                grew = True
                break
            if len(chain) >= limit:
                break
            # extend at the beginning: previous ray ends where the chain starts
            for j in by_r.get(rays[chain[0]].t, ()):
                if used[j]:
                    continue
                if specular_chaining and not _chain_mirror_ok(rays[j], rays[chain[0]], dom, angle_tol):
                    continue
                if _crosses_any(rays[j], segs) or not disjoint(j, taken, rays[j].r):
                    continue
                used[j] = True
                chain.insert(0, j)
                segs.extend(rays[j].legs)
                if cells is not None:
                    taken |= cells[j]
                grew = True
                break
        groups.append(chain)
    return groups


def partition_abstract_rays(L: RaySet | Sequence[Ray], mode: str = "free",
                            specular_chaining: bool = False,
                            angle_tol: float = DEFAULT_ANGLE_TOL,
                            dom: DomainSpec | None = None,
                            max_elements: int | None = None,
                            window: int = 64, grid=None) -> AbstractRaySet:
    """Partition a ray set into abstract rays, greedily in input order.

    ``chained`` grows each abstract ray at either end with a ray that shares
    the boundary vertex (receiver of one is transmitter of the next) and
    crosses none of the segments gathered so far.  ``free`` drops the
    shared-vertex requirement; it fills each group from the next ``window``
    unused rays.  ``max_elements`` caps the group size (free mode defaults
    to 2).  Given a ``grid``, members of an abstract ray share no cell
    (chained mode allows the cells at the joining vertex), which keeps
    weight averaging at assembly to a minimum.
    """
    rays = list(L)
    if not rays:
        raise InvalidInputError("cannot partition an empty ray set")
    if mode == "chained":
        groups = _chained_partition(rays, specular_chaining, dom, angle_tol, max_elements, grid)
    elif mode == "free":
        size = max_elements or 2
        segs, nsegs = _segment_array(rays)
        if grid is not None:
            cell_ptr, cell_idx = _ray_cells(rays, grid)
            n_cells = grid.n_cells
        else:
            cell_ptr, cell_idx, n_cells = np.empty(0, np.int64), np.empty(0, np.int64), 0
        gid = _kernels.greedy_free_groups(segs, nsegs, size, window, cell_ptr, cell_idx, n_cells)
        groups = [[] for _ in range(int(gid.max()) + 1)]
        for i, g in enumerate(gid.tolist()):
            groups[g].append(i)
    else:
        raise InvalidInputError(f"unknown partition mode {mode!r}")
    abstract = [
        AbstractRay(tuple(rays[i] for i in g), tuple(g), mode) for g in groups
    ]
    return AbstractRaySet(abstract, len(rays))


def validate_partition(aset: AbstractRaySet, L: Sequence[Ray]) -> None:
    """Exhaustive soundness check; raises ``AssertionError`` on violation."""
    seen = sorted(i for ar in aset for i in ar.indices)
    assert seen == list(range(len(L))), "abstract rays do not partition the source set"
    for ar in aset:
        for i, ray in zip(ar.indices, ar.elements):
            assert L[i] == ray, "element does not match its source index"
        segs = ar.segments
        for a in range(len(segs)):
            for b in range(a + 1, len(segs)):
                assert not segments_properly_intersect(segs[a], segs[b]), "abstract ray crosses itself"
    assert len(aset) <= len(L)


def abstract_travel_times(aset: AbstractRaySet, P: Sequence[float],
                          index_map: Sequence[Sequence[int]] | None = None) -> np.ndarray:
    """Per abstract ray, the sum of its members' travel times."""
    P = np.asarray(P, dtype=float)
    groups = index_map if index_map is not None else [ar.indices for ar in aset]
    out = np.empty(len(groups))
    for j, idx in enumerate(groups):
        total = 0.0
        for i in idx:
            if not 0 <= i < len(P):
                raise InvalidInputError(f"abstract ray {j}: ray index {i} out of range")
            total += P[i]
        out[j] = total
    return out


def coverage_bitmap_check(aset: AbstractRaySet, A: Sequence[Ray]) -> tuple[bool, list[int]]:
    """Mark every ray of ``A`` that appears inside some abstract ray."""
    position = {ray: i for i, ray in enumerate(A)}
    bits = np.zeros(len(position), dtype=bool)
    for ar in aset:
        for ray in ar.elements:
            i = position.get(ray)
            if i is not None:
                bits[i] = True
    missing = np.nonzero(~bits)[0].tolist()
    return not missing, missing


def write_ray_set(path, rays: Iterable[Ray]) -> None:
    with open(path, "w") as fh:
        fh.write("# U x_t y_t x_r y_r | B x_t y_t x_h y_h x_r y_r\n")
        for ray in rays:
            fh.write(ray.to_line() + "\n")


def parse_ray_line(line: str) -> Ray:
    parts = line.split()
    try:
        vals = [float(v) for v in parts[1:]]
    except ValueError as exc:
        raise InvalidInputError(f"bad coordinate in {line!r}") from exc
    if parts[0] == "U" and len(vals) == 4:
        return Ray(Point2(vals[0], vals[1]), Point2(vals[2], vals[3]))
    if parts[0] == "B" and len(vals) == 6:
        return Ray(Point2(vals[0], vals[1]), Point2(vals[4], vals[5]), Point2(vals[2], vals[3]))
    raise InvalidInputError(f"malformed ray line {line!r}")


def read_ray_set(path) -> RaySet:
    rays = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rays.append(parse_ray_line(line))
            except InvalidInputError as exc:
                raise InvalidInputError(f"{path}:{lineno}: {exc}") from exc
    return RaySet(rays)


def write_abstract_set(path, aset: AbstractRaySet) -> None:
    with open(path, "w") as fh:
        fh.write("# A k i_1 ... i_k (indices into the companion ray-set file)\n")
        for ar in aset:
            fh.write(f"A {len(ar.indices)} " + " ".join(str(i) for i in ar.indices) + "\n")


def read_abstract_set(path, source: Sequence[Ray]) -> AbstractRaySet:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                if parts[0] != "A":
                    raise ValueError
                k = int(parts[1])
                idx = tuple(int(v) for v in parts[2:])
                if len(idx) != k:
                    raise ValueError
            except (ValueError, IndexError) as exc:
                raise InvalidInputError(f"{path}:{lineno}: malformed abstract ray line") from exc
            for i in idx:
                if not 0 <= i < len(source):
                    raise InvalidInputError(f"{path}:{lineno}: ray index {i} out of range")
            out.append(AbstractRay(tuple(source[i] for i in idx), idx))
    return AbstractRaySet(out, len(source))
