"""Slowness fields and travel-time quadrature along ray polylines.

The reconstructed unknown is the slowness ``f = 1 / (c0 + eps)``.  Test
fields are identified by an integer id; every id has a closed form so tests
can evaluate it independently.  With ``c = (x0, y0)`` the field center,
``S`` the length scale (domain side), ``A = K * S`` and ``r = |p - c|``:

====  ==============================================================
id    closed form
====  ==============================================================
0     ``K * r``
1     ``K * |p - (x0 + S/8, y0 - S/16)|``
2     ``K * |p - (x0 - 3S/16, y0 + 5S/32)|``
3     ``K * ((x - x0) + (y - y0) + S) / 2``
4     ``A * (1/8 + 1/2 * exp(-r^2 / (2 (S/6)^2)))``
5     ``A/4 * (1 + 1/2 * sin(2 pi (x - x0)/S) * sin(2 pi (y - y0)/S))``
6     ``K * sqrt((x - x0)^2 / 4 + (y - y0)^2)``
7     ``K * max(|x - x0|, |y - y0|)``
8     ``A * (1/8 + 1/2 g(p, c + (-S/5, -S/6)) + 0.35 g(p, c + (S/5, S/5)))``
      with ``g(p, q) = exp(-|p - q|^2 / (2 (S/10)^2))``
9     ``A/4 * (1 + 1/2 * cos(2 pi r / S))``
10    ``K * (|x - x0| + S/8)``
11    ``K * r^2 / S``
12    ``K * ((y - y0) + S/2) / 2 + A/4 * exp(-|p - c - (S/8, -S/8)|^2 / (2 (S/8)^2))``
====  ==============================================================

All of them are nonnegative on the square of side ``S`` centred at ``c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Iterable, Sequence

import numpy as np

from brokenray.geometry import InvalidInputError, Point2

DEFAULT_K = 1e-3
DEFAULT_QUADRATURE = 4
N_TEST_FUNCTIONS = 13


def _gauss(x, y, qx, qy, sigma):
    return np.exp(-((x - qx) ** 2 + (y - qy) ** 2) / (2.0 * sigma**2))


def _f0(x, y, K, x0, y0, S):
    return K * np.hypot(x - x0, y - y0)


def _f1(x, y, K, x0, y0, S):
    return K * np.hypot(x - (x0 + S / 8), y - (y0 - S / 16))


def _f2(x, y, K, x0, y0, S):
    return K * np.hypot(x - (x0 - 3 * S / 16), y - (y0 + 5 * S / 32))


def _f3(x, y, K, x0, y0, S):
    return K * ((x - x0) + (y - y0) + S) / 2


def _f4(x, y, K, x0, y0, S):
    return K * S * (0.125 + 0.5 * _gauss(x, y, x0, y0, S / 6))


def _f5(x, y, K, x0, y0, S):
    w = 2 * np.pi / S
    return K * S / 4 * (1 + 0.5 * np.sin(w * (x - x0)) * np.sin(w * (y - y0)))


def _f6(x, y, K, x0, y0, S):
    return K * np.sqrt((x - x0) ** 2 / 4 + (y - y0) ** 2)


def _f7(x, y, K, x0, y0, S):
    return K * np.maximum(np.abs(x - x0), np.abs(y - y0))


def _f8(x, y, K, x0, y0, S):
    s = S / 10
    return K * S * (
        0.125
        + 0.5 * _gauss(x, y, x0 - S / 5, y0 - S / 6, s)
        + 0.35 * _gauss(x, y, x0 + S / 5, y0 + S / 5, s)
    )


def _f9(x, y, K, x0, y0, S):
    return K * S / 4 * (1 + 0.5 * np.cos(2 * np.pi * np.hypot(x - x0, y - y0) / S))


def _f10(x, y, K, x0, y0, S):
    return K * (np.abs(x - x0) + S / 8)


def _f11(x, y, K, x0, y0, S):
    return K * ((x - x0) ** 2 + (y - y0) ** 2) / S


def _f12(x, y, K, x0, y0, S):
    ramp = K * ((y - y0) + S / 2) / 2
    return ramp + K * S / 4 * _gauss(x, y, x0 + S / 8, y0 - S / 8, S / 8)


TEST_FUNCTIONS: dict[int, Callable] = {
    0: _f0, 1: _f1, 2: _f2, 3: _f3, 4: _f4, 5: _f5, 6: _f6,
    7: _f7, 8: _f8, 9: _f9, 10: _f10, 11: _f11, 12: _f12,
}


@dataclass(frozen=True)
class ScalarField:
    """A test field by id, or a piecewise-constant field backed by grid values.

    ``grid`` must be a :class:`brokenray.linsys.Grid` when ``values`` is
    given; grid-backed fields are zero outside the grid square.
    """

    function_id: int | None = 0
    K: float = DEFAULT_K
    center: Point2 = Point2(256.0, 256.0)
    scale: float = 512.0
    values: np.ndarray | None = dc_field(default=None, compare=False)
    grid: object | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", Point2(*self.center))
        if self.values is None:
            if self.function_id not in TEST_FUNCTIONS:
                raise InvalidInputError(f"unknown test function id {self.function_id!r}")
        elif self.grid is None:
            raise InvalidInputError("grid-backed field needs a grid")

    @classmethod
    def from_grid(cls, grid, values) -> "ScalarField":
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n * grid.n,):
            raise InvalidInputError(f"expected {grid.n * grid.n} values, got {values.shape}")
        return cls(function_id=None, values=values, grid=grid)

    @property
    def kind(self) -> str:
        return "grid_backed" if self.values is not None else f"f{self.function_id}"

    def evaluate(self, x, y) -> np.ndarray:
        """Vectorised evaluation at coordinate arrays ``x``, ``y``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.values is not None:
            g = self.grid
            inside = (
                (x >= g.origin.x) & (x <= g.origin.x + g.side)
                & (y >= g.origin.y) & (y <= g.origin.y + g.side)
            )
            col = np.clip(np.floor((x - g.origin.x) / g.cell_size), 0, g.n - 1).astype(np.int64)
            row = np.clip(np.floor((y - g.origin.y) / g.cell_size), 0, g.n - 1).astype(np.int64)
            return np.where(inside, self.values[row * g.n + col], 0.0)
        fn = TEST_FUNCTIONS[self.function_id]
        return fn(x, y, self.K, self.center.x, self.center.y, self.scale)

    def sample_cells(self, grid) -> np.ndarray:
        """Field values at the cell centers, row-major."""
        xs, ys = grid.cell_centers()
        return self.evaluate(xs, ys)


def eval_field(f: ScalarField, p: Point2) -> float:
    return float(f.evaluate(p[0], p[1]))


@dataclass(frozen=True)
class SpeedModel:
    """Speed ``c0 + eps(x)``; only its reciprocal enters the linear system."""

    c0: float
    epsilon: ScalarField

    def speed(self, x, y) -> np.ndarray:
        return self.c0 + self.epsilon.evaluate(x, y)

    def slowness(self, x, y) -> np.ndarray:
        return 1.0 / self.speed(x, y)

    def check_positive(self, grid) -> None:
        xs, ys = grid.cell_centers()
        if not np.all(self.speed(xs, ys) > 0):
            raise InvalidInputError("speed must stay positive over the grid")


def leg_integrals(ax, ay, bx, by, f: ScalarField, points_per_unit: float = DEFAULT_QUADRATURE,
                  chunk_nodes: int = 1 << 21) -> np.ndarray:
    """Composite trapezoid integral of ``f`` along each straight leg.

    Every leg gets ``ceil(length * points_per_unit)`` intervals (at least
    one).  Legs are integrated in a canonical direction so that a leg and
    its reverse give bit-identical results.
    """
    ax, ay, bx, by = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (ax, ay, bx, by))
    if points_per_unit <= 0:
        raise InvalidInputError("points_per_unit must be positive")
    swap = (ax > bx) | ((ax == bx) & (ay > by))
    ax, bx = np.where(swap, bx, ax), np.where(swap, ax, bx)
    ay, by = np.where(swap, by, ay), np.where(swap, ay, by)
    dx = bx - ax
    dy = by - ay
    length = np.hypot(dx, dy)
    n_int = np.maximum(1, np.ceil(length * points_per_unit)).astype(np.int64)
    out = np.empty(len(ax))

    bounds = np.cumsum(n_int + 1)
    start = 0
    while start < len(ax):
        base = bounds[start - 1] if start else 0
        stop = int(np.searchsorted(bounds, base + chunk_nodes, side="right"))
        stop = max(stop, start + 1)
        sl = slice(start, stop)
        counts = n_int[sl] + 1
        owner = np.repeat(np.arange(stop - start), counts)
        first = np.repeat(np.cumsum(counts) - counts, counts)
        k = np.arange(owner.size) - first
        n_rep = n_int[sl][owner]
        t = k / n_rep
        vals = f.evaluate(ax[sl][owner] + t * dx[sl][owner], ay[sl][owner] + t * dy[sl][owner])
        vals = np.where((k == 0) | (k == n_rep), 0.5 * vals, vals)
        sums = np.bincount(owner, weights=vals, minlength=stop - start)
        out[sl] = sums * (length[sl] / n_int[sl])
        start = stop
    return out


def _leg_coords(ray) -> list[tuple[float, float, float, float]]:
    legs = []
    for seg in ray.legs:
        (ax, ay), (bx, by) = seg
        if ax == bx and ay == by:
            raise InvalidInputError(f"zero-length leg at {(ax, ay)}")
        legs.append((ax, ay, bx, by))
    return legs


def travel_time(ray, f: ScalarField, quadrature_points_per_unit: float = DEFAULT_QUADRATURE) -> float:
    """Integral of ``f`` along the ray, summed leg by leg."""
    legs = np.array(_leg_coords(ray))
    vals = leg_integrals(legs[:, 0], legs[:, 1], legs[:, 2], legs[:, 3], f, quadrature_points_per_unit)
    total = 0.0
    for v in vals:
        total += float(v)
    return total


def travel_times(rays: Iterable, f: ScalarField, quadrature: float = DEFAULT_QUADRATURE) -> np.ndarray:
    """Travel time of every ray, in input order.

    Legs shared between rays are integrated once; results are identical to
    calling :func:`travel_time` ray by ray.
    """
    keys: dict[tuple, int] = {}
    coords: list[tuple[float, float, float, float]] = []
    ray_legs: list[list[int]] = []
    for i, ray in enumerate(rays):
        try:
            legs = _leg_coords(ray)
        except InvalidInputError as exc:
            raise InvalidInputError(f"ray {i}: {exc}") from exc
        ids = []
        for leg in legs:
            key = leg if (leg[0], leg[1]) <= (leg[2], leg[3]) else (leg[2], leg[3], leg[0], leg[1])
            j = keys.get(key)
            if j is None:
                j = keys[key] = len(coords)
                coords.append(key)
            ids.append(j)
        ray_legs.append(ids)
    if not ray_legs:
        return np.zeros(0)
    c = np.array(coords)
    integrals = leg_integrals(c[:, 0], c[:, 1], c[:, 2], c[:, 3], f, quadrature).tolist()
    out = np.empty(len(ray_legs))
    for i, ids in enumerate(ray_legs):
        total = 0.0
        for j in ids:
            total += integrals[j]
        out[i] = total
    return out


def write_times(path, times: Sequence[float]) -> None:
    with open(path, "w") as fh:
        for v in times:
            fh.write(f"{float(v)!r}\n")


def read_times(path) -> np.ndarray:
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                values.append(float(line))
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{lineno}: not a number: {line!r}") from exc
    return np.array(values)
