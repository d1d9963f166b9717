"""Command-line entry point.

Exit status: 0 on success, 1 on invalid input, 2 on I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from brokenray.config import ABSTRACT_MODES, MODELS, ExperimentConfig, load_config
from brokenray.experiment import (
    TABLE2_SIDES,
    TABLE3_FRACTIONS,
    TABLE4_FUNCTIONS,
    build_scene,
    emit_results,
    generate_rays,
    partition,
    run_experiment,
    run_table,
    TableResult,
)
from brokenray.field import read_times, travel_times, write_times
from brokenray.geometry import InvalidInputError
from brokenray.linsys import assemble, kaczmarz_solve, write_grid_text, write_grid_vector
from brokenray.rays import (
    abstract_travel_times,
    read_abstract_set,
    read_ray_set,
    write_abstract_set,
    write_ray_set,
)

log = logging.getLogger("brokenray")

FLAG_KEYS = {
    "seed": "seed",
    "grid_n": "grid_n",
    "obstacle_side": "obstacle_side",
    "rays": "rays",
    "unbroken_fraction": "unbroken_fraction",
    "model": "model",
    "function": "function_id",
    "abstract_mode": "abstract_mode",
    "tol": "tol",
    "max_updates": "max_updates",
    "sweeps": "sweeps",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--grid-n", type=int)
    p.add_argument("--obstacle-side", type=float)
    p.add_argument("--rays", type=int, help="total number of rays requested")
    p.add_argument("--unbroken-fraction", type=float)
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--function", type=int, help="test function id 0..12")
    p.add_argument("--abstract-mode", choices=ABSTRACT_MODES)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-updates", type=int)
    p.add_argument("--sweeps", type=float, help="update budget in passes over the rows")
    p.add_argument("--out", required=True, help="output file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="brokenray", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-rays", help="write a ray-set file")
    _common(p)

    p = sub.add_parser("travel-times", help="synthesize travel times for a ray-set file")
    _common(p)
    p.add_argument("--ray-file", required=True)

    p = sub.add_parser("reduce", help="partition a ray-set file into abstract rays")
    _common(p)
    p.add_argument("--ray-file", required=True)

    p = sub.add_parser("reconstruct", help="solve for the grid field from rays and times")
    _common(p)
    p.add_argument("--ray-file", required=True)
    p.add_argument("--times-file", required=True)
    p.add_argument("--abstract-file", help="abstract-ray-set file indexing into --ray-file")
    p.add_argument("--text", action="store_true", help="write one value per line instead of BRT1")

    for name in ("experiment", "table1", "table2", "table3", "table4"):
        p = sub.add_parser(name, help="run a single experiment" if name == "experiment" else f"preset sweep {name}")
        _common(p)
        p.add_argument("--format", choices=("text", "csv"), default="text")
        p.add_argument("--timing", action="store_true", help="include wall time in the results")
    return parser


def config_from_args(args) -> ExperimentConfig:
    overrides = {}
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, **overrides)


def _paired_path(out: str, tag: str) -> Path:
    p = Path(out)
    return p.with_name(f"{p.stem}.{tag}{p.suffix}")


def _run(args) -> None:
    cfg = config_from_args(args)
    cmd = args.command
    if cmd == "gen-rays":
        rays = generate_rays(cfg)
        write_ray_set(args.out, rays)
        if any(rays.shortfall):
            print(f"note: requested {rays.requested}, shortfall {rays.shortfall}", file=sys.stderr)
    elif cmd == "travel-times":
        scene = build_scene(cfg)
        write_times(args.out, travel_times(read_ray_set(args.ray_file), scene.field, cfg.quadrature))
    elif cmd == "reduce":
        scene = build_scene(cfg)
        mode_cfg = cfg if cfg.abstract_mode != "off" else cfg.replace(abstract_mode="free")
        write_abstract_set(args.out, partition(mode_cfg, read_ray_set(args.ray_file), scene))
    elif cmd == "reconstruct":
        scene = build_scene(cfg)
        rays = read_ray_set(args.ray_file)
        times = read_times(args.times_file)
        if len(times) != len(rays):
            raise InvalidInputError(f"{len(rays)} rays but {len(times)} travel times")
        rows, rhs = rays, times
        if args.abstract_file:
            rows = read_abstract_set(args.abstract_file, rays)
            rhs = abstract_travel_times(rows, times)
        W = assemble(rows, rhs, scene.grid, scene.obs, scene.dom)
        x, report = kaczmarz_solve(W, seed=[cfg.seed, 1], tol=cfg.tol,
                                   max_updates=cfg.max_updates, sweeps=cfg.sweeps)
        if args.text:
            write_grid_text(args.out, x)
        else:
            write_grid_vector(args.out, scene.grid, x)
        print(f"{report.iterations} updates, residual {report.residual_norm:.6e}", file=sys.stderr)
    elif cmd == "experiment":
        report = run_experiment(cfg)
        emit_results(TableResult("seed", [cfg.seed], [report]), args.out, args.format, args.timing)
    else:
        for tag, table in _preset(cmd, cfg):
            emit_results(table, _paired_path(args.out, tag), args.format, args.timing)


def _preset(cmd: str, cfg: ExperimentConfig):
    brtl = cfg if cfg.model != "art" else cfg.replace(model="lambertian")
    art = cfg.replace(model="art")
    if cmd == "table1":
        yield "art", run_table(art, "repeat", 10)
        yield "brtl", run_table(brtl, "repeat", 10)
    elif cmd == "table2":
        yield "art", run_table(art, "obstacle_side", TABLE2_SIDES)
        yield "brtl", run_table(brtl, "obstacle_side", TABLE2_SIDES)
    elif cmd == "table3":
        yield "brtl", run_table(brtl.replace(exclude_vertices=True), "unbroken_fraction", TABLE3_FRACTIONS)
    elif cmd == "table4":
        brtl = brtl.replace(exclude_vertices=True)
        art = art.replace(exclude_vertices=True)
        yield "art", run_table(art, "function_id", TABLE4_FUNCTIONS)
        yield "brtl", run_table(brtl, "function_id", TABLE4_FUNCTIONS)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
