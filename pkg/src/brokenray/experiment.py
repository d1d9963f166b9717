"""End-to-end runs: synthesize rays and data, reconstruct, score, tabulate."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from brokenray.config import ExperimentConfig
from brokenray.field import ScalarField, travel_times
from brokenray.geometry import DomainSpec, InvalidInputError, Obstacle
from brokenray.linsys import Grid, assemble, kaczmarz_solve
from brokenray.rays import (
    abstract_travel_times,
    build_ray_set,
    coverage_bitmap_check,
    make_layout,
    partition_abstract_rays,
)

log = logging.getLogger(__name__)

TABLE2_SIDES = [130.0, 156.0, 182.0, 208.0, 234.0, 260.0, 286.0, 312.0, 338.0, 364.0]
TABLE3_FRACTIONS = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95]
TABLE4_FUNCTIONS = list(range(13))


def reconstruction_error(f_rec, f_true, mask) -> float:
    """Mean absolute difference over the cells selected by ``mask``."""
    f_rec = np.asarray(f_rec, dtype=float)
    f_true = np.asarray(f_true, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if f_rec.shape != f_true.shape or mask.shape != f_rec.shape:
        raise InvalidInputError("reconstruction, reference and mask must have equal length")
    if not mask.any():
        raise InvalidInputError("empty mask")
    return float(np.abs(f_rec[mask] - f_true[mask]).mean())


@dataclass
class ExperimentReport:
    error: float
    iterations: int
    ray_counts: tuple[int, int]
    reduced_rows: int
    wall_time: float
    config: ExperimentConfig
    shortfall: tuple[int, int] = (0, 0)
    converged: bool = False
    coverage_complete: bool | None = None
    reconstruction: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def total_rays(self) -> int:
        return sum(self.ray_counts)


@dataclass
class Scene:
    dom: DomainSpec
    obs: Obstacle
    grid: Grid
    field: ScalarField


def build_scene(cfg: ExperimentConfig) -> Scene:
    dom = DomainSpec(cfg.domain_side)
    obs = Obstacle(dom.center, cfg.obstacle_side)
    obs.validate_inside(dom)
    grid = Grid.covering(dom, cfg.grid_n)
    f = ScalarField(cfg.function_id, cfg.K, dom.center, cfg.domain_side)
    return Scene(dom, obs, grid, f)


def generate_rays(cfg: ExperimentConfig, scene: Scene | None = None):
    scene = scene or build_scene(cfg)
    layout = make_layout(scene.dom, scene.obs, cfg.grid_n, cfg.spacing,
                         cfg.exclude_vertices, cfg.transceivers_per_side)
    model = "lambertian" if cfg.model == "art" else cfg.model
    return build_ray_set(layout, scene.dom, scene.obs, cfg.n_b, cfg.n_u, model,
                         cfg.seed, cfg.angle_tol, skip_boundary_chords=cfg.skip_boundary_chords)


def partition(cfg: ExperimentConfig, rays, scene: Scene):
    return partition_abstract_rays(
        rays, cfg.abstract_mode, specular_chaining=cfg.model == "specular",
        angle_tol=cfg.angle_tol, dom=scene.dom,
        max_elements=cfg.partition_max_elements, window=cfg.partition_window,
        grid=scene.grid,
    )


def solver_seed(cfg: ExperimentConfig) -> list[int]:
    return [cfg.seed, 1]


def run_experiment(cfg: ExperimentConfig, keep_reconstruction: bool = False) -> ExperimentReport:
    """Generate rays, synthesize travel times, reconstruct, and score one configuration."""
    start = time.perf_counter()
    try:
        scene = build_scene(cfg)
        rays = generate_rays(cfg, scene)
        times = travel_times(rays, scene.field, cfg.quadrature)
        rows, rhs, coverage = rays, times, None
        if cfg.abstract_mode != "off":
            rows = partition(cfg, rays, scene)
            rhs = abstract_travel_times(rows, times)
            coverage, _ = coverage_bitmap_check(rows, rays)
        W = assemble(rows, rhs, scene.grid, scene.obs, scene.dom)
        x, report = kaczmarz_solve(W, seed=solver_seed(cfg), tol=cfg.tol,
                                   max_updates=cfg.max_updates, sweeps=cfg.sweeps)
        f_true = scene.field.sample_cells(scene.grid)
        mask = scene.grid.field_mask(scene.obs, scene.dom)
        err = reconstruction_error(x, f_true, mask)
    except InvalidInputError as exc:
        raise InvalidInputError(f"{exc} (config: {cfg})") from exc
    wall = time.perf_counter() - start
    log.info("run seed=%s model=%s: error %.6e, %d updates, %d rows, %.1fs",
             cfg.seed, cfg.model, err, report.iterations, W.n_rows, wall)
    return ExperimentReport(
        error=err,
        iterations=report.iterations,
        ray_counts=rays.counts,
        reduced_rows=W.n_rows,
        wall_time=wall,
        config=cfg,
        shortfall=rays.shortfall,
        converged=report.converged,
        coverage_complete=coverage,
        reconstruction=x if keep_reconstruction else None,
    )


SWEEP_KINDS = ("repeat", "obstacle_side", "unbroken_fraction", "function_id")


@dataclass
class TableResult:
    key: str
    keys: list[Any]
    reports: list[ExperimentReport]

    @property
    def average(self) -> dict[str, float]:
        return {
            "error": float(np.mean([r.error for r in self.reports])),
            "iterations": float(np.mean([r.iterations for r in self.reports])),
            "reduced_rows": float(np.mean([r.reduced_rows for r in self.reports])),
            "wall_time": float(np.mean([r.wall_time for r in self.reports])),
        }


def run_table(template: ExperimentConfig, sweep: str, values: Sequence | None = None) -> TableResult:
    """Run ``template`` once per sweep point.

    ``repeat`` takes a count (default 10) and numbers the runs from 1, with
    seeds ``template.seed + k``; other sweeps replace the named field.
    """
    if sweep not in SWEEP_KINDS:
        raise InvalidInputError(f"sweep must be one of {SWEEP_KINDS}")
    if sweep == "repeat":
        count = 10 if values is None else int(values if np.isscalar(values) else len(values))
        keys: list[Any] = list(range(1, count + 1))
        configs = [template.replace(seed=template.seed + k) for k in range(count)]
    else:
        if not values:
            raise InvalidInputError("sweep needs at least one value")
        keys = list(values)
        configs = [template.replace(**{sweep: v}) for v in keys]
    reports = [run_experiment(c) for c in configs]
    return TableResult("experiment" if sweep == "repeat" else sweep, keys, reports)


COLUMNS = ("error", "iterations", "reduced_rows", "wall_time")


def _cells(key, error, iterations, reduced, wall, timing: bool) -> list[str]:
    out = [str(key), repr(float(error)), repr(iterations), repr(reduced)]
    if timing:
        out.append(repr(float(wall)))
    return out


def emit_results(table: TableResult, path, fmt: str = "text", timing: bool = False) -> None:
    """Write one line per report plus an ``Average`` line when there are several.

    Wall time varies between runs, so it is only written when ``timing``
    is set; without it, equal configurations give byte-identical files.
    """
    header = [table.key, "error", "iterations", "reduced_rows"] + (["wall_time"] if timing else [])
    rows = [header]
    for key, r in zip(table.keys, table.reports):
        rows.append(_cells(key, r.error, r.iterations, r.reduced_rows, r.wall_time, timing))
    if len(table.reports) > 1:
        a = table.average
        rows.append(_cells("Average", a["error"], a["iterations"], a["reduced_rows"], a["wall_time"], timing))
    try:
        with open(path, "w", newline="") as fh:
            if fmt == "csv":
                csv.writer(fh, lineterminator="\n").writerows(rows)
            elif fmt == "text":
                widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
                for row in rows:
                    fh.write("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() + "\n")
            else:
                raise InvalidInputError(f"unknown results format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            return text


def parse_results(path) -> list[dict[str, Any]]:
    """Read back a file written by :func:`emit_results` (either format)."""
    with open(path, newline="") as fh:
        text = fh.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return []
    if "," in lines[0]:
        table = list(csv.reader(lines))
    else:
        table = [ln.split() for ln in lines]
    header = table[0]
    return [{h: _number(v) for h, v in zip(header, row)} for row in table[1:]]
