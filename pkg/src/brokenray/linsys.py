"""Computation grid, sparse weight matrices, and the Kaczmarz solver."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from brokenray import _kernels
from brokenray.geometry import DomainSpec, InvalidInputError, Obstacle, Point2, Segment
from brokenray.rays import AbstractRaySet, Ray

MAGIC = b"BRT1"
DEFAULT_TOL = 1e-10
WINDOW_CAP = 4096
# update budget in passes over the rows when max_updates is not given
DEFAULT_SWEEPS = 3.0


@dataclass(frozen=True)
class Grid:
    """``n x n`` square cells of side ``cell_size``; cell ``row * n + col``."""

    n: int
    cell_size: float
    origin: Point2 = Point2(0.0, 0.0)

    def __post_init__(self):
        if self.n < 1 or not self.cell_size > 0:
            raise InvalidInputError("grid needs n >= 1 and a positive cell size")
        object.__setattr__(self, "origin", Point2(*self.origin))

    @classmethod
    def covering(cls, dom: DomainSpec, n: int) -> "Grid":
        return cls(n, dom.side / n, dom.origin)

    @property
    def side(self) -> float:
        return self.n * self.cell_size

    @property
    def n_cells(self) -> int:
        return self.n * self.n

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.origin.x + (np.arange(self.n) + 0.5) * self.cell_size
        r = self.origin.y + (np.arange(self.n) + 0.5) * self.cell_size
        xs, ys = np.meshgrid(c, r)
        return xs.ravel(), ys.ravel()

    def cell_bounds(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        xs, ys = self.cell_centers()
        h = self.cell_size / 2
        return xs - h, ys - h, xs + h, ys + h

    def dead_cells(self, obs: Obstacle | None = None, dom: DomainSpec | None = None) -> np.ndarray:
        """Cells lying entirely inside the obstacle or entirely outside the domain."""
        x0, y0, x1, y1 = self.cell_bounds()
        dead = np.zeros(self.n_cells, dtype=bool)
        if obs is not None:
            dead |= (x0 >= obs.xmin) & (x1 <= obs.xmax) & (y0 >= obs.ymin) & (y1 <= obs.ymax)
        if dom is not None:
            dead |= (x1 <= dom.xmin) | (x0 >= dom.xmax) | (y1 <= dom.ymin) | (y0 >= dom.ymax)
        return dead

    def field_mask(self, obs: Obstacle | None = None, dom: DomainSpec | None = None) -> np.ndarray:
        """Cells whose center lies in the domain and outside the closed obstacle."""
        xs, ys = self.cell_centers()
        keep = np.ones(self.n_cells, dtype=bool)
        if obs is not None:
            keep &= ~((xs >= obs.xmin) & (xs <= obs.xmax) & (ys >= obs.ymin) & (ys <= obs.ymax))
        if dom is not None:
            keep &= (xs >= dom.xmin) & (xs <= dom.xmax) & (ys >= dom.ymin) & (ys <= dom.ymax)
        return keep


def _clip_to_grid(ax, ay, bx, by, grid: Grid):
    """Liang-Barsky clip of one segment to the grid square, or ``None``."""
    x0, y0 = grid.origin
    x1, y1 = x0 + grid.side, y0 + grid.side
    dx, dy = bx - ax, by - ay
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, ax - x0), (dx, x1 - ax), (-dy, ay - y0), (dy, y1 - ay)):
        if p == 0:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
    if t0 >= t1:
        return None
    if t0 == 0.0 and t1 == 1.0:
        return ax, ay, bx, by
    return ax + t0 * dx, ay + t0 * dy, ax + t1 * dx, ay + t1 * dy


def cell_traversal(seg: Segment, grid: Grid) -> list[tuple[int, float]]:
    """(cell index, length inside the cell) pairs in the order the segment visits them."""
    (ax, ay), (bx, by) = seg
    if ax == bx and ay == by:
        raise InvalidInputError("degenerate segment")
    clipped = _clip_to_grid(ax, ay, bx, by, grid)
    if clipped is None:
        return []
    cells = np.empty(2 * grid.n + 4, dtype=np.int64)
    lengths = np.empty(2 * grid.n + 4)
    k = _kernels.traverse(*clipped, grid.origin.x, grid.origin.y, grid.cell_size, grid.n, cells, lengths)
    return list(zip(cells[:k].tolist(), lengths[:k].tolist()))


@dataclass(frozen=True)
class WeightRow:
    entries: list[tuple[int, float]]
    rhs: float


@dataclass
class WeightMatrix:
    """Rows in CSR form: ``indices[indptr[j]:indptr[j+1]]`` are the cells of row ``j``."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    rhs: np.ndarray
    n_cells: int
    grid: Grid | None = None

    @property
    def n_rows(self) -> int:
        return len(self.rhs)

    def row(self, j: int) -> WeightRow:
        s, e = self.indptr[j], self.indptr[j + 1]
        return WeightRow(list(zip(self.indices[s:e].tolist(), self.data[s:e].tolist())), float(self.rhs[j]))

    @property
    def rows(self) -> list[WeightRow]:
        return [self.row(j) for j in range(self.n_rows)]

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n_rows, self.n_cells))

    @classmethod
    def from_dense(cls, A, b) -> "WeightMatrix":
        m = sp.csr_matrix(np.asarray(A, dtype=float))
        m.sort_indices()
        return cls(m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data.astype(float),
                   np.asarray(b, dtype=float), m.shape[1])


def _row_members(rows) -> list[tuple[Ray, ...]]:
    return [(item,) if isinstance(item, Ray) else tuple(item.elements) for item in rows]


def assemble(rays_or_abstract, times: Sequence[float], grid: Grid, obs: Obstacle | None = None,
             dom: DomainSpec | None = None) -> WeightMatrix:
    """One row per ray (or abstract ray) with the given travel times as right-hand side.

    Within a member ray the weight of a cell is the ray's full length inside
    it (both legs of a broken ray count).  A cell cut by several member rays
    of an abstract ray gets the mean of their weights.  Cells entirely
    inside the obstacle or outside the domain never receive weights.
    """
    rows = list(rays_or_abstract.abstract_rays if isinstance(rays_or_abstract, AbstractRaySet)
                else rays_or_abstract)
    times = np.asarray(times, dtype=float)
    if len(times) != len(rows):
        raise InvalidInputError(f"{len(rows)} rows but {len(times)} travel times")
    legs = []
    owner = []
    row_ptr = [0]
    for j, members in enumerate(_row_members(rows)):
        for k, ray in enumerate(members):
            for (ax, ay), (bx, by) in ray.legs:
                if ax == bx and ay == by:
                    raise InvalidInputError(f"row {j}: degenerate leg")
                clipped = _clip_to_grid(ax, ay, bx, by, grid)
                if clipped is not None:
                    legs.append(clipped)
                    owner.append(k)
        row_ptr.append(len(legs))
    legs_arr = np.array(legs, dtype=float).reshape(-1, 4)
    dead = grid.dead_cells(obs, dom)
    indptr, indices, data = _kernels.assemble_rows(
        legs_arr, np.array(owner, dtype=np.int64), np.array(row_ptr, dtype=np.int64), grid.origin.x, grid.origin.y,
        grid.cell_size, grid.n, dead,
    )
    empty = np.nonzero(np.diff(indptr) == 0)[0]
    if len(empty):
        raise InvalidInputError(f"row {int(empty[0])} has no weights (zero-norm row)")
    return WeightMatrix(indptr, indices, data, times.copy(), grid.n_cells, grid)


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    final_update_norm: float
    residual_norm: float
    converged: bool
    effective_updates: int


def residual_norm(W: WeightMatrix, f) -> float:
    """Euclidean norm of ``W f - P``."""
    return float(np.linalg.norm(W.to_scipy() @ np.asarray(f, dtype=float) - W.rhs))


def default_v_min(field, grid: Grid) -> float:
    """Lower speed bound ``1 / max f`` with f sampled at cell corners and centers."""
    h = grid.cell_size / 2
    ticks = grid.origin.x + h * np.arange(2 * grid.n + 1), grid.origin.y + h * np.arange(2 * grid.n + 1)
    xs, ys = np.meshgrid(*ticks)
    fmax = float(np.max(field.evaluate(xs.ravel(), ys.ravel())))
    if fmax <= 0:
        raise InvalidInputError("field has no positive value, speed bound undefined")
    return 1.0 / fmax


def cell_error_bound(grid: Grid, v_min: float) -> float:
    """Largest travel-time error one multiply-hit cell can add to a row."""
    if v_min <= 0:
        raise InvalidInputError("v_min must be positive")
    return math.sqrt(2.0) * grid.cell_size / v_min


def kaczmarz_solve(W: WeightMatrix, x0=None, seed: int | None = None, tol: float = DEFAULT_TOL,
                   max_updates: int | None = None, order: np.ndarray | None = None,
                   sweeps: float = DEFAULT_SWEEPS):
    """Cyclic Kaczmarz projections, relaxation 1.

    Rows are visited in ``order`` (by default a permutation drawn from
    ``seed``, or natural order when ``seed`` is None).  The solve stops
    after ``min(N_r, 4096)`` consecutive corrections of norm below ``tol``
    or after ``max_updates`` row updates (default ``sweeps`` passes over
    the rows).
    """
    m = W.n_rows
    if m == 0:
        raise InvalidInputError("empty system")
    if np.any(np.diff(W.indptr) == 0):
        raise InvalidInputError("weight matrix has an empty row")
    if np.any(np.add.reduceat(W.data**2, W.indptr[:-1]) <= 0):
        raise InvalidInputError("weight matrix has a zero-norm row")
    x = np.zeros(W.n_cells) if x0 is None else np.array(x0, dtype=float)
    if x.shape != (W.n_cells,):
        raise InvalidInputError(f"initial guess must have length {W.n_cells}")
    if order is None:
        order = np.arange(m) if seed is None else np.random.default_rng(seed).permutation(m)
    order = np.asarray(order, dtype=np.int64)
    if max_updates is None:
        max_updates = max(1, math.ceil(sweeps * m))
    window = min(m, WINDOW_CAP)
    it, corr, last_sig = _kernels.kaczmarz(
        W.indptr, W.indices, W.data, W.rhs, x, order, float(tol), int(max_updates), window
    )
    report = SolveReport(int(it), float(corr), residual_norm(W, x),
                         it - last_sig >= window, int(last_sig))
    return x, report


def write_matrix(path, W: WeightMatrix) -> None:
    """Binary container: magic, n and cell size (float64), row count (uint64),
    per-row entry counts (uint32), indices (uint32), weights and rhs (float64),
    all little-endian."""
    grid = W.grid
    n = float(grid.n) if grid else math.sqrt(W.n_cells)
    d = float(grid.cell_size) if grid else 1.0
    counts = np.diff(W.indptr).astype("<u4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<ddQ", n, d, W.n_rows))
        fh.write(counts.tobytes())
        fh.write(W.indices.astype("<u4").tobytes())
        fh.write(W.data.astype("<f8").tobytes())
        fh.write(W.rhs.astype("<f8").tobytes())


def read_matrix(path) -> WeightMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise InvalidInputError(f"{path}: not a BRT1 container")
    n, d, rows = struct.unpack_from("<ddQ", blob, 4)
    pos = 4 + 24
    counts = np.frombuffer(blob, "<u4", rows, pos).astype(np.int64)
    pos += 4 * rows
    nnz = int(counts.sum())
    indices = np.frombuffer(blob, "<u4", nnz, pos).astype(np.int64)
    pos += 4 * nnz
    data = np.frombuffer(blob, "<f8", nnz, pos).copy()
    pos += 8 * nnz
    rhs = np.frombuffer(blob, "<f8", rows, pos).copy()
    indptr = np.concatenate([[0], np.cumsum(counts)])
    grid = Grid(int(n), d)
    return WeightMatrix(indptr, indices, data, rhs, grid.n_cells, grid)


def write_grid_vector(path, grid: Grid, values) -> None:
    """Same header with a zero row count, followed by the N^2 values (float64)."""
    values = np.asarray(values, dtype="<f8")
    if values.shape != (grid.n_cells,):
        raise InvalidInputError(f"expected {grid.n_cells} values")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<ddQ", float(grid.n), float(grid.cell_size), 0))
        fh.write(values.tobytes())


def read_grid_vector(path) -> tuple[Grid, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise InvalidInputError(f"{path}: not a BRT1 container")
    n, d, rows = struct.unpack_from("<ddQ", blob, 4)
    if rows != 0:
        raise InvalidInputError(f"{path}: holds a weight matrix, not a grid vector")
    grid = Grid(int(n), d)
    return grid, np.frombuffer(blob, "<f8", grid.n_cells, 28).copy()


def write_grid_text(path, values) -> None:
    with open(path, "w") as fh:
        for v in np.asarray(values, dtype=float).tolist():
            fh.write(f"{v!r}\n")
