"""Plain-text polygon mesh files (``v``/``f`` records, 1-based) and sidecars.

Coordinates are written with 17 significant digits so a read-write cycle
reproduces every float bit for bit.  Lattice data and the face adjacency
that the text format cannot carry go into ``<stem>.json`` next to the mesh.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import MalformedMesh
from .hexgrid import HexMesh


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_obj(path, positions, faces: Sequence[Sequence[int]], header: str | None = None) -> None:
    path = Path(path)
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    for p in np.asarray(positions, dtype=float).reshape(-1, 3):
        lines.append("v " + " ".join(_fmt(c) for c in p))
    for f in faces:
        lines.append("f " + " ".join(str(int(i) + 1) for i in f))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def read_obj(path) -> tuple[np.ndarray, list[tuple[int, ...]]]:
    path = Path(path)
    text = path.read_text()
    verts: list[list[float]] = []
    faces: list[tuple[int, ...]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        if tag == "v":
            if len(rest) < 3:
                raise MalformedMesh(f"{path}:{lineno}: vertex needs 3 coordinates")
            try:
                verts.append([float(c) for c in rest[:3]])
            except ValueError:
                raise MalformedMesh(f"{path}:{lineno}: bad coordinate in {raw!r}") from None
        elif tag == "f":
            if len(rest) < 3:
                raise MalformedMesh(f"{path}:{lineno}: face needs at least 3 vertices")
            idx = []
            for tok in rest:
                try:
                    k = int(tok.split("/")[0])
                except ValueError:
                    raise MalformedMesh(f"{path}:{lineno}: bad vertex index {tok!r}") from None
                if k < 1:
                    raise MalformedMesh(f"{path}:{lineno}: vertex index {k} (indices are 1-based)")
                idx.append(k - 1)
            faces.append(tuple(idx))
        # other record types (vn, vt, o, g, s, ...) are ignored
    n = len(verts)
    for k, f in enumerate(faces):
        if max(f) >= n:
            raise MalformedMesh(f"{path}: face {k} references vertex {max(f) + 1} of {n}")
    return np.array(verts, dtype=float).reshape(-1, 3), faces


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def adjacency_json(mesh: HexMesh) -> dict:
    return {
        "nodes": sorted(int(f) for f in mesh.adjacency.nodes),
        "edges": sorted(sorted((int(a), int(b))) for a, b in mesh.adjacency.edges),
    }


def export_mesh(mesh: HexMesh, path) -> None:
    write_obj(path, mesh.positions, mesh.faces)
    side = adjacency_json(mesh)
    if mesh.uv is not None:
        side["subdivision"] = mesh.subdivision
        side["uv"] = mesh.uv.tolist()
    sidecar_path(path).write_text(json.dumps(side, indent=1) + "\n")


def import_mesh(path) -> HexMesh:
    positions, faces = read_obj(path)
    uv = subdivision = None
    side = sidecar_path(path)
    if side.exists():
        data = json.loads(side.read_text())
        if "uv" in data:
            uv = np.asarray(data["uv"], dtype=np.int64)
            if uv.shape != (len(positions), 2):
                raise MalformedMesh(f"{side}: uv table does not match {len(positions)} vertices")
            subdivision = data.get("subdivision")
    return HexMesh.from_faces(faces, positions, uv=uv, subdivision=subdivision)
