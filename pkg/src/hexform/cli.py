"""Command line entry point: ``hexform <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from .errors import HexformError, StageError
from .meshio import import_mesh


def _config(args) -> pl.PipelineConfig:
    return pl.load_config(args.config) if args.config else pl.default_config()


def _physics_config(path) -> pl.PipelineConfig:
    """Accept a full pipeline config or a bare physics section."""
    text = Path(path).read_text()
    if not text.strip():
        raise pl.ParseError(f"{path}: empty config file")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise pl.ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if isinstance(data, dict) and not set(data) & set(pl.DEFAULTS):
        data = {"physics": data}
    return pl.config_from_dict(data)


def cmd_grid(args) -> None:
    cfg = _config(args)
    side = args.side if args.side is not None else cfg.grid["sideMeters"]
    n = args.subdivision if args.subdivision is not None else cfg.grid["subdivision"]
    mesh = pl.stage_grid(float(side), int(n), Path(args.out))
    print(f"{mesh.n_faces} hexagons, {mesh.n_vertices} vertices -> {args.out}")


def cmd_simulate(args) -> None:
    cfg = _physics_config(args.config) if args.config else pl.default_config()
    mesh = import_mesh(args.mesh)
    _, result, _ = pl.stage_simulate(mesh, cfg, Path(args.out), Path(args.trace) if args.trace else None)
    print(f"equilibrium after {result.steps} steps, residual {result.max_residual_force:.3e} N -> {args.out}")


def cmd_planarize(args) -> None:
    cfg = _config(args)
    settings = cfg.planarize_settings()
    kw = {}
    if args.tolerance is not None:
        kw["rel_tolerance"] = args.tolerance
    if args.max_iters is not None:
        kw["max_iterations"] = args.max_iters
    if kw:
        settings = pl.PlanarizeSettings(**{**settings.__dict__, **kw})
    mesh = import_mesh(args.mesh)
    _, result = pl.stage_planarize(mesh, settings, cfg.planarize["pinned"], Path(args.out),
                                   Path(args.trace) if args.trace else None)
    print(f"{result.iterations} iterations, max planarity error {result.max_planarity_error:.3e} m -> {args.out}")


def cmd_fabricate(args) -> None:
    fcfg = dict(_config(args).fabricate)
    for key, val in (("wallHeight", args.wall_height), ("thickness", args.thickness),
                     ("jointProportion", args.joint_proportion), ("holeDiameter", args.hole_diameter)):
        if val is not None:
            fcfg[key] = val
    model = pl.stage_fabricate(import_mesh(args.mesh), fcfg, Path(args.out_dir))
    print(f"{len(model.panels)} panels, {len(model.joints)} joints, "
          f"max e_dev {model.deviation.max * 1000:.3f} mm -> {args.out_dir}")


def cmd_pipeline(args) -> None:
    cfg = _config(args)
    report = pl.run_pipeline(cfg, args.out_dir)
    print(pl.summarize(report.to_dict()))


def cmd_report(args) -> None:
    run_dir = Path(args.run_dir or args.out_dir or _config(args).output["directory"])
    data = json.loads((run_dir / "report.json").read_text())
    print(pl.summarize(data))
    problems = pl.verify_report(run_dir)
    for p in problems:
        print(p, file=sys.stderr)
    if problems:
        raise SystemExit(1)
    print(f"{len(data['outputs'])} outputs verified")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hexform", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="pipeline config JSON (defaults to the shipped one)")
        p.set_defaults(func=fn)
        return p

    p = add("grid", cmd_grid, "build the hexagon mesh on a subdivided triangle")
    p.add_argument("--side", type=float, help="triangle side length in meters")
    p.add_argument("--subdivision", type=int, help="segments per edge (multiple of 3)")
    p.add_argument("--out", required=True)

    p = add("simulate", cmd_simulate, "form-find the mesh with the particle-spring model")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="CSV of step, kineticEnergy, maxResidualForce")

    p = add("planarize", cmd_planarize, "make every face planar with minimal displacement")
    p.add_argument("--mesh", required=True)
    p.add_argument("--tolerance", type=float, help="planarity tolerance relative to the bbox diagonal")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="CSV of iteration, objective, maxPlanarityError, wPlan")

    p = add("fabricate", cmd_fabricate, "emit panel boxes, joints and the deviation report")
    p.add_argument("--mesh", required=True)
    p.add_argument("--wall-height", type=float)
    p.add_argument("--thickness", type=float)
    p.add_argument("--joint-proportion", type=float)
    p.add_argument("--hole-diameter", type=float)
    p.add_argument("--out-dir", required=True)

    p = add("pipeline", cmd_pipeline, "run every stage and write report.json")
    p.add_argument("--out-dir")

    p = add("report", cmd_report, "summarize and verify a finished run")
    p.add_argument("--run-dir")
    p.add_argument("--out-dir")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (HexformError, OSError) as exc:
        print(f"error: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
