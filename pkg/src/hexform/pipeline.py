"""Configuration, stage runners and the end-to-end run.

Stages run in a fixed order: grid, simulate, planarize, fabricate.  Each
stage function takes its inputs explicitly and writes its own artifacts, so
the CLI subcommands and :func:`run_pipeline` share one code path.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from . import fabricate as fab
from .errors import InvalidConfig, ParseError, StageError
from .hexgrid import HexMesh, build_hex_mesh, equilateral_corners, subdivide_triangle, validate_hex_mesh
from .meshio import export_mesh, write_obj
from .physics import SimulationParams, SpringDefaults, build_spring_system, simulate_to_equilibrium
from .planarize import PlanarizeSettings, planarize

log = logging.getLogger(__name__)

REFERENCE_DEVIATION_MM = 4.0
TRACE_EVERY = 10

DEFAULTS: dict[str, dict[str, Any]] = {
    "grid": {"sideMeters": 6.0, "subdivision": 9},
    "physics": {
        "mass": 1.0,
        "kStretch": 500.0,
        "kShear": 50.0,
        "kBend": 50.0,
        "damping": 5.0,
        "springDamping": 0.0,
        "dt": 0.005,
        "g": 9.81,
        "anchors": "corners",
        "invertAfterSolve": True,
        "forceTolerance": 1e-4,
        "maxSteps": 200000,
    },
    "planarize": {
        "tolerance": 1e-6,
        "maxIterations": 500,
        "wClose": 1.0,
        "wPlan": 10.0,
        "pinned": [],
    },
    "fabricate": {
        "wallHeight": 0.10,
        "thickness": 0.012,
        "jointProportion": 0.25,
        "holeDiameter": 0.006,
    },
    "output": {"directory": "out", "formats": ["obj"]},
}


@dataclass
class PipelineConfig:
    grid: dict[str, Any]
    physics: dict[str, Any]
    planarize: dict[str, Any]
    fabricate: dict[str, Any]
    output: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {k: copy.deepcopy(getattr(self, k)) for k in DEFAULTS}

    def simulation_params(self) -> SimulationParams:
        p = self.physics
        return SimulationParams(
            g=float(p["g"]),
            dt=float(p["dt"]),
            global_damping=float(p["damping"]),
            force_tolerance=float(p["forceTolerance"]),
            max_steps=int(p["maxSteps"]),
            invert_after_solve=bool(p["invertAfterSolve"]),
        )

    def spring_defaults(self) -> SpringDefaults:
        p = self.physics
        return SpringDefaults(
            mass=float(p["mass"]),
            k_stretch=float(p["kStretch"]),
            k_shear=float(p["kShear"]),
            k_bend=float(p["kBend"]),
            spring_damping=float(p["springDamping"]),
        )

    def planarize_settings(self) -> PlanarizeSettings:
        p = self.planarize
        return PlanarizeSettings(
            rel_tolerance=float(p["tolerance"]),
            max_iterations=int(p["maxIterations"]),
            w_close=float(p["wClose"]),
            w_plan=float(p["wPlan"]),
        )


def _merge(section: str, given: Any) -> dict[str, Any]:
    if not isinstance(given, dict):
        raise InvalidConfig(f"section '{section}' must be an object")
    unknown = sorted(set(given) - set(DEFAULTS[section]))
    if unknown:
        raise InvalidConfig(f"unknown keys in '{section}': {', '.join(unknown)}")
    out = copy.deepcopy(DEFAULTS[section])
    out.update(copy.deepcopy(given))
    return out


def _positive(cfg: dict, section: str, *keys: str) -> None:
    for k in keys:
        v = cfg[k]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
            raise InvalidConfig(f"{section}.{k} must be a positive number, got {v!r}")


def config_from_dict(data: dict[str, Any]) -> PipelineConfig:
    if not isinstance(data, dict):
        raise InvalidConfig("config must be a JSON object")
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        raise InvalidConfig(f"unknown sections: {', '.join(unknown)}")
    merged = {s: _merge(s, data.get(s, {})) for s in DEFAULTS}

    g = merged["grid"]
    _positive(g, "grid", "sideMeters")
    n = g["subdivision"]
    if isinstance(n, bool) or not isinstance(n, int) or n < 3:
        raise InvalidConfig(f"grid.subdivision must be an integer >= 3, got {n!r}")
    if n % 3 != 0:
        raise InvalidConfig("subdivision must be a multiple of 3")

    p = merged["physics"]
    _positive(p, "physics", "mass", "kStretch", "kShear", "kBend", "dt", "forceTolerance", "maxSteps")
    for k in ("damping", "springDamping"):
        if not isinstance(p[k], (int, float)) or p[k] < 0:
            raise InvalidConfig(f"physics.{k} must be >= 0")
    if not isinstance(p["g"], (int, float)):
        raise InvalidConfig("physics.g must be a number")
    a = p["anchors"]
    if not (a in ("corners", "boundary") or (isinstance(a, list) and all(isinstance(i, int) for i in a))):
        raise InvalidConfig('physics.anchors must be "corners", "boundary" or a list of vertex indices')
    if p["g"] != 0 and a == []:
        raise InvalidConfig("physics.anchors is empty while gravity is on")
    if p["damping"] == 0 and p["springDamping"] == 0:
        raise InvalidConfig("physics needs damping > 0 or springDamping > 0 to reach equilibrium")

    q = merged["planarize"]
    _positive(q, "planarize", "tolerance", "maxIterations", "wClose", "wPlan")

    f = merged["fabricate"]
    _positive(f, "fabricate", "wallHeight", "thickness", "jointProportion", "holeDiameter")
    if f["jointProportion"] > 0.5:
        raise InvalidConfig("fabricate.jointProportion must lie in (0, 0.5]")
    return PipelineConfig(**merged)


def default_config() -> PipelineConfig:
    return load_config(resources.files("hexform") / "data" / "default.json")


def load_config(path) -> PipelineConfig:
    text = path.read_text() if hasattr(path, "read_text") else Path(path).read_text()
    if not text.strip():
        raise ParseError(f"{path}: empty config file")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return config_from_dict(data)


# ---------------------------------------------------------------- artifacts

def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_csv(path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format(x, ".17g") if isinstance(x, float) else x for x in row])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(buf.getvalue())


def _write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


# ------------------------------------------------------------------- stages

def stage_grid(side: float, subdivision: int, out: Path | None = None) -> HexMesh:
    mesh = build_hex_mesh(subdivide_triangle(*equilateral_corners(side), subdivision))
    problems = validate_hex_mesh(mesh)
    if problems:
        raise InvalidConfig("generated mesh is invalid: " + "; ".join(problems))
    if out is not None:
        export_mesh(mesh, out)
    return mesh


def resolve_anchors(mesh: HexMesh, choice) -> list[int]:
    if choice == "corners":
        return mesh.corner_vertices()
    if choice == "boundary":
        return mesh.boundary_vertices()
    return sorted(int(i) for i in choice)


def stage_simulate(mesh: HexMesh, cfg: PipelineConfig, out: Path | None = None, trace: Path | None = None):
    sys = build_spring_system(
        mesh, cfg.spring_defaults(), resolve_anchors(mesh, cfg.physics["anchors"]), cfg.simulation_params()
    )
    result = simulate_to_equilibrium(sys, trace_every=TRACE_EVERY if trace is not None else 0)
    form = mesh.with_positions(result.positions)
    if out is not None:
        export_mesh(form, out)
    if trace is not None:
        _write_csv(trace, ["step", "kineticEnergy", "maxResidualForce"], result.trace)
    return form, result, sys


def stage_planarize(mesh: HexMesh, settings: PlanarizeSettings, pinned=(), out: Path | None = None,
                    trace: Path | None = None):
    problems = validate_hex_mesh(mesh)
    if problems:
        raise InvalidConfig("mesh fails validation: " + "; ".join(problems[:5]))
    result = planarize(mesh.positions, mesh.faces, settings, pinned=pinned)
    planar = mesh.with_positions(result.Q)
    if out is not None:
        export_mesh(planar, out)
    if trace is not None:
        _write_csv(trace, ["iteration", "objective", "maxPlanarityError", "wPlan"], result.iteration_trace)
    return planar, result


@dataclass
class FabricationModel:
    orientation: fab.Orientation
    offsets: fab.OffsetField
    deviation: fab.DeviationReport
    panels: list[fab.PanelBox]
    joints: list[fab.Joint]
    flat_corners: list[int] = field(default_factory=list)


def stage_fabricate(mesh: HexMesh, fcfg: dict[str, Any], out_dir: Path | None = None) -> FabricationModel:
    # normals point down so walls hang below the panels
    orientation = fab.face_normals(mesh, toward=(0.0, 0.0, -1.0))
    m = orientation.mesh
    offsets = fab.averaged_offsets(m, orientation.normals, float(fcfg["wallHeight"]))
    deviation = fab.deviation_report(m, offsets)
    panels = fab.build_panel_boxes(m, offsets, float(fcfg["thickness"]))
    joints = fab.build_joints(m, offsets, float(fcfg["jointProportion"]), float(fcfg["thickness"]),
                              float(fcfg["holeDiameter"]), strict=False)
    fab.attach_wall_fasteners(panels, joints)
    with_joint = {j.vertex for j in joints}
    flat = [v for v, fs in enumerate(offsets.vertex_faces) if len(fs) == 3 and v not in with_joint]
    model = FabricationModel(orientation, offsets, deviation, panels, joints, flat)
    if out_dir is not None:
        write_fabrication(model, Path(out_dir))
    return model


def write_fabrication(model: FabricationModel, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for box in model.panels:
        verts, faces = box.polygons()
        write_obj(out_dir / f"panel_{box.face_index:04d}.obj", verts, faces,
                  header=f"panel {box.face_index} thickness {box.thickness!r} m")
    for j in model.joints:
        verts, faces = j.polygons()
        write_obj(out_dir / f"joint_{j.vertex:04d}.obj", verts, faces,
                  header=f"joint at vertex {j.vertex} thickness {j.thickness!r} m")
    _write_csv(out_dir / "deviation_report.csv", ["vertexIndex", "x", "y", "z", "e_dev_m"], model.deviation.rows())
    fasteners = [fa.to_json() for j in model.joints for fa in j.fasteners]
    _write_json(out_dir / "fasteners.json", fasteners)


# ------------------------------------------------------------------ pipeline

@dataclass
class RunReport:
    timings: dict[str, float]
    counts: dict[str, int]
    physics: dict[str, float]
    planarize: dict[str, float]
    fabricate: dict[str, Any]
    config: dict[str, Any]
    outputs: dict[str, str]

    def to_dict(self) -> dict[str, Any]:
        return {
            "timings": self.timings,
            "counts": self.counts,
            "physics": self.physics,
            "planarize": self.planarize,
            "fabricate": self.fabricate,
            "config": self.config,
            "outputs": self.outputs,
        }


def _run_stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def run_pipeline(cfg: PipelineConfig, out_dir=None) -> RunReport:
    """Run all four stages, write every artifact and ``report.json``."""
    out = Path(out_dir if out_dir is not None else cfg.output["directory"])
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}

    t = time.perf_counter()
    grid = _run_stage("grid", stage_grid, float(cfg.grid["sideMeters"]), int(cfg.grid["subdivision"]), out / "grid.obj")
    timings["grid"] = time.perf_counter() - t

    t = time.perf_counter()
    form, sim, springs = _run_stage("simulate", stage_simulate, grid, cfg, out / "form.obj", out / "simulate_trace.csv")
    timings["simulate"] = time.perf_counter() - t

    t = time.perf_counter()
    planar, pl = _run_stage("planarize", stage_planarize, form, cfg.planarize_settings(),
                            cfg.planarize["pinned"], out / "planar.obj", out / "planarize_trace.csv")
    timings["planarize"] = time.perf_counter() - t

    t = time.perf_counter()
    model = _run_stage("fabricate", stage_fabricate, planar, cfg.fabricate, out / "fabrication")
    timings["fabricate"] = time.perf_counter() - t

    kinds: dict[str, int] = {}
    for s in springs.springs:
        kinds[s.kind] = kinds.get(s.kind, 0) + 1
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "report.json")
    report = RunReport(
        timings=timings,
        counts={
            "faces": grid.n_faces,
            "vertices": grid.n_vertices,
            "springs": len(springs.springs),
            **{f"springs_{k}": v for k, v in sorted(kinds.items())},
            "anchors": int(springs.anchored.sum()),
            "panels": len(model.panels),
            "joints": len(model.joints),
            "flatCorners": len(model.flat_corners),
        },
        physics={
            "steps": sim.steps,
            "maxResidualForce": sim.max_residual_force,
            "forceTolerance": float(cfg.physics["forceTolerance"]),
        },
        planarize={
            "iterations": pl.iterations,
            "maxPlanarityError": pl.max_planarity_error,
            "tolerance": pl.tolerance,
        },
        fabricate={
            "maxDeviation_m": model.deviation.max,
            "maxDeviation_mm": model.deviation.max * 1000.0,
            "referenceDeviationBound_mm": REFERENCE_DEVIATION_MM,
            "orientationRepairs": len(model.orientation.flipped),
        },
        config=cfg.to_dict(),
        outputs={p.relative_to(out).as_posix(): sha256(p) for p in files},
    )
    _write_json(out / "report.json", report.to_dict())
    log.info("pipeline done in %.2f s", sum(timings.values()))
    return report


def verify_report(run_dir) -> list[str]:
    """Check that every output listed in ``report.json`` exists and matches its hash."""
    run_dir = Path(run_dir)
    data = json.loads((run_dir / "report.json").read_text())
    problems = []
    for rel, digest in sorted(data["outputs"].items()):
        p = run_dir / rel
        if not p.exists():
            problems.append(f"missing: {rel}")
        elif sha256(p) != digest:
            problems.append(f"hash mismatch: {rel}")
    return problems


def summarize(report: dict[str, Any]) -> str:
    c, ph, pl, fb = report["counts"], report["physics"], report["planarize"], report["fabricate"]
    lines = [
        f"faces {c['faces']}  vertices {c['vertices']}  springs {c['springs']}  joints {c['joints']}",
        f"physics: {ph['steps']} steps, residual {ph['maxResidualForce']:.3e} N (tol {ph['forceTolerance']:.1e})",
        f"planarize: {pl['iterations']} iterations, max planarity error {pl['maxPlanarityError']:.3e} m "
        f"(tol {pl['tolerance']:.3e})",
        f"deviation: max e_dev {fb['maxDeviation_mm']:.3f} mm (reported bound {fb['referenceDeviationBound_mm']:.0f} mm, "
        "informational)",
    ]
    if "timings" in report:
        order = ["grid", "simulate", "planarize", "fabricate"]
        t = report["timings"]
        lines.append("timings: " + ", ".join(f"{k} {t[k]:.2f}s" for k in sorted(t, key=lambda k: (order.index(k) if k in order else len(order), k))))
    return "\n".join(lines)

