"""Fabrication geometry for a planar hex mesh.

Every edge gets a wall whose lower corners are the edge endpoints pushed
along the unit average of the (up to three) face normals at each endpoint.
Because both panels on an edge use the same vertex averages their walls
coincide.  The deviation error measures, per vertex, how far the
vertex-averaged offset lands from the two-face edge average.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePyramid, OppositeNormals, OrientationConflict, SelfIntersectingWall
from .hexgrid import HexMesh
from .planarize import fit_plane

log = logging.getLogger(__name__)


def _newell(pts: np.ndarray) -> np.ndarray:
    nxt = np.roll(pts, -1, axis=0)
    return np.array([
        np.sum((pts[:, 1] - nxt[:, 1]) * (pts[:, 2] + nxt[:, 2])),
        np.sum((pts[:, 2] - nxt[:, 2]) * (pts[:, 0] + nxt[:, 0])),
        np.sum((pts[:, 0] - nxt[:, 0]) * (pts[:, 1] + nxt[:, 1])),
    ])


def _unit(v: np.ndarray, what: str) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm < 1e-9:
        raise OppositeNormals(f"{what}: averaged normal vanishes (|avg| = {norm:.2e})")
    return v / norm


@dataclass
class Orientation:
    normals: np.ndarray  # (F, 3)
    mesh: HexMesh  # faces rewound where needed
    flipped: list[int] = field(default_factory=list)
    report: list[str] = field(default_factory=list)


def face_normals(mesh: HexMesh, toward=None, repair: bool = True) -> Orientation:
    """Unit plane normals with one consistent orientation across the mesh.

    Orientation spreads from the lowest face of each component through the
    face adjacency.  A neighbour that runs a shared edge the same way is
    rewound (``repair=True``, logged in the report) or rejected.  When
    ``toward`` is given the whole mesh is flipped if the seed normal points
    away from it.
    """
    faces = [list(f) for f in mesh.faces]
    nf = len(faces)
    directed: dict[tuple[int, int], int] = {}
    visited = [False] * nf
    flipped: list[int] = []
    report: list[str] = []

    def edges(f):
        vs = faces[f]
        return [(vs[k], vs[(k + 1) % len(vs)]) for k in range(len(vs))]

    for seed in range(nf):
        if visited[seed]:
            continue
        visited[seed] = True
        queue = deque([seed])
        while queue:
            f = queue.popleft()
            for a, b in edges(f):
                directed[(a, b)] = f
            for g in sorted(mesh.adjacency.neighbors(f)):
                if visited[g]:
                    continue
                gedges = edges(g)
                if any(e in directed for e in gedges):
                    if not repair:
                        raise OrientationConflict(f"face {g} is wound against face {f}")
                    faces[g].reverse()
                    flipped.append(g)
                    report.append(f"face {g}: winding reversed to match face {f}")
                    gedges = edges(g)
                    if any(e in directed for e in gedges):
                        raise OrientationConflict(f"face {g} cannot be oriented consistently")
                visited[g] = True
                queue.append(g)
    # second pass catches contradictions closed by later faces
    seen: dict[tuple[int, int], int] = {}
    for f in range(nf):
        for e in edges(f):
            if e in seen:
                raise OrientationConflict(f"faces {seen[e]} and {f} both run edge {e}")
            seen[e] = f

    P = mesh.positions
    normals = np.empty((nf, 3))
    for f, vs in enumerate(faces):
        pts = P[vs]
        n, _ = fit_plane(pts)
        normals[f] = n if n @ _newell(pts) >= 0 else -n

    if toward is not None and nf and normals[0] @ np.asarray(toward, float) < 0:
        normals = -normals
        for vs in faces:
            vs.reverse()
        report.append("all faces reversed to face the requested direction")

    oriented = HexMesh.from_faces(faces, P, uv=mesh.uv, subdivision=mesh.subdivision)
    return Orientation(normals, oriented, flipped, report)


@dataclass
class OffsetField:
    face_normals: np.ndarray  # (F, 3)
    edge_normals: dict[tuple[int, int], np.ndarray]  # sorted edge -> unit average
    vertex_normals: np.ndarray  # (N, 3) unit averages, zero rows for unused vertices
    edge_faces: dict[tuple[int, int], list[int]]
    vertex_faces: list[list[int]]
    h: float

    def offset(self, i: int) -> np.ndarray:
        return self.h * self.vertex_normals[i]


def averaged_offsets(mesh: HexMesh, normals, h: float) -> OffsetField:
    """Unit averages of the face normals per edge (2 faces) and per vertex (3).

    Boundary edges and vertices average whatever faces they have.
    """
    normals = np.asarray(normals, dtype=float)
    edge_faces = mesh.edge_faces()
    vertex_faces = mesh.vertex_faces()
    edge_normals = {
        e: _unit(np.mean(normals[fs], axis=0), f"edge {e}") for e, fs in sorted(edge_faces.items())
    }
    vn = np.zeros((mesh.n_vertices, 3))
    for i, fs in enumerate(vertex_faces):
        if fs:
            vn[i] = _unit(np.mean(normals[fs], axis=0), f"vertex {i}")
    return OffsetField(normals, edge_normals, vn, edge_faces, vertex_faces, float(h))


def _incident_edges(offsets: OffsetField, i: int) -> list[tuple[int, int]]:
    return [e for e in offsets.edge_normals if i in e]


def deviation_error(i: int, offsets: OffsetField) -> float:
    """Largest gap at vertex ``i`` between ``h * edge average`` and ``h * vertex average``."""
    vn = offsets.vertex_normals[i]
    gaps = [np.linalg.norm(offsets.h * offsets.edge_normals[e] - offsets.h * vn) for e in _incident_edges(offsets, i)]
    return float(max(gaps)) if gaps else 0.0


@dataclass
class DeviationReport:
    positions: np.ndarray
    e_dev: np.ndarray

    @property
    def max(self) -> float:
        return float(self.e_dev.max()) if len(self.e_dev) else 0.0

    def rows(self) -> list[tuple[int, float, float, float, float]]:
        return [(i, *map(float, self.positions[i]), float(self.e_dev[i])) for i in range(len(self.e_dev))]


def deviation_report(mesh: HexMesh, offsets: OffsetField) -> DeviationReport:
    by_vertex: dict[int, list[tuple[int, int]]] = {i: [] for i in range(mesh.n_vertices)}
    for e in offsets.edge_normals:
        by_vertex[e[0]].append(e)
        by_vertex[e[1]].append(e)
    e_dev = np.zeros(mesh.n_vertices)
    for i, es in by_vertex.items():
        vn = offsets.vertex_normals[i]
        if es:
            e_dev[i] = max(np.linalg.norm(offsets.h * offsets.edge_normals[e] - offsets.h * vn) for e in es)
    return DeviationReport(np.array(mesh.positions, dtype=float), e_dev)


@dataclass(frozen=True)
class Fastener:
    owner: str  # "panel:<face>" or "joint:<vertex>"
    center: tuple[float, float, float]
    axis: tuple[float, float, float]
    diameter: float

    def to_json(self) -> dict:
        return {"id": self.owner, "center": list(self.center), "axis": list(self.axis), "diameter": self.diameter}


@dataclass
class PanelBox:
    face_index: int
    top: np.ndarray  # (k, 3) planar polygon
    walls: list[np.ndarray]  # k quads (a, b, b', a')
    thickness: float
    fasteners: list[Fastener] = field(default_factory=list)

    def polygons(self) -> tuple[np.ndarray, list[tuple[int, ...]]]:
        k = len(self.top)
        low = np.array([w[3] for w in self.walls])
        verts = np.vstack([self.top, low])
        faces = [tuple(range(k))] + [(a, (a + 1) % k, k + (a + 1) % k, k + a) for a in range(k)]
        return verts, faces


def _quad_flipped(q: np.ndarray) -> bool:
    a, b, b2, a2 = q
    if (b - a) @ (b2 - a2) <= 0:
        return True
    n1 = np.cross(b - a, b2 - a)
    n2 = np.cross(b2 - a, a2 - a)
    return bool(n1 @ n2 <= 0)


def build_panel_boxes(mesh: HexMesh, offsets: OffsetField, thickness: float) -> list[PanelBox]:
    """Top polygon plus one wall quad per edge for every face.

    Faces must already be consistently wound (see :func:`face_normals`);
    wall quads then face away from their panel.
    """
    if not offsets.h > 0 or not thickness > 0:
        raise ValueError("wall height and thickness must be positive")
    P = np.asarray(mesh.positions, dtype=float)
    boxes = []
    for f, vs in enumerate(mesh.faces):
        top = P[list(vs)]
        walls = []
        for k in range(len(vs)):
            i, j = vs[k], vs[(k + 1) % len(vs)]
            quad = np.array([P[i], P[j], P[j] + offsets.offset(j), P[i] + offsets.offset(i)])
            if _quad_flipped(quad):
                raise SelfIntersectingWall(f"face {f}, edge ({i}, {j}): wall folds over (h too large?)")
            walls.append(quad)
        boxes.append(PanelBox(f, top, walls, float(thickness)))
    return boxes


@dataclass
class Joint:
    vertex: int
    apex: np.ndarray
    base: np.ndarray  # (3, 3) one point per incident edge
    neighbors: tuple[int, int, int]
    axis: np.ndarray  # unit vertex-average normal
    thickness: float
    fasteners: list[Fastener] = field(default_factory=list)

    @property
    def volume(self) -> float:
        return pyramid_volume(self.apex, self.base)

    def polygons(self) -> tuple[np.ndarray, list[tuple[int, ...]]]:
        verts = np.vstack([self.base, self.apex[None, :]])
        return verts, [(0, 2, 1), (0, 1, 3), (1, 2, 3), (2, 0, 3)]


def pyramid_volume(apex, base) -> float:
    b = np.asarray(base, float) - np.asarray(apex, float)
    return float(abs(np.linalg.det(b)) / 6.0)


def _wall_quad(P: np.ndarray, offsets: OffsetField, i: int, j: int) -> np.ndarray:
    return np.array([P[i], P[j], P[j] + offsets.offset(j), P[i] + offsets.offset(i)])


def wall_plane_normal(quad: np.ndarray) -> np.ndarray:
    n, _ = fit_plane(quad)
    out = quad[1] - quad[0]
    # sign is irrelevant for a bolt axis; fix it for reproducible output
    ref = np.cross(out, quad[3] - quad[0])
    return n if n @ ref >= 0 else -n


def build_joints(
    mesh: HexMesh,
    offsets: OffsetField,
    t: float,
    thickness: float,
    hole_diameter: float,
    strict: bool = True,
) -> list[Joint]:
    """Pyramid ``p1 p2 p3 v`` at every vertex shared by three faces.

    ``p_k = v + t (w_k - v)`` for the three edge neighbours ``w_k``; the
    vertex-average normal is the joint axis along which thickness is
    applied.  Each joint carries one fastener per incident wall, centred on
    the wall at ``t/2`` along the edge and half the wall height, with its
    axis normal to the wall plane; the panels on that wall get the mating
    marker.  Flat corners give zero-volume pyramids: they raise
    :class:`DegeneratePyramid` when ``strict`` and are skipped otherwise.
    """
    if not 0 < t <= 0.5:
        raise ValueError("joint proportion t must lie in (0, 0.5]")
    P = np.asarray(mesh.positions, dtype=float)
    joints = []
    for v, fs in enumerate(offsets.vertex_faces):
        if len(fs) != 3:
            continue
        nbrs = sorted(mesh.graph.neighbors(v))
        if len(nbrs) != 3:
            continue
        axis = offsets.vertex_normals[v]
        # counter-clockwise about the axis for a stable winding
        ref = P[nbrs[0]] - P[v]
        e1 = ref - (ref @ axis) * axis
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(axis, e1)
        nbrs.sort(key=lambda w: np.arctan2((P[w] - P[v]) @ e2, (P[w] - P[v]) @ e1) % (2 * np.pi))
        base = np.array([P[v] + t * (P[w] - P[v]) for w in nbrs])
        vol = pyramid_volume(P[v], base)
        if vol < 1e-12:
            if strict:
                raise DegeneratePyramid(f"vertex {v}: pyramid volume {vol:.2e} m^3 (flat corner)")
            log.debug("vertex %d: flat corner, no joint", v)
            continue
        joint = Joint(v, P[v].copy(), base, tuple(nbrs), axis.copy(), float(thickness))
        for w in nbrs:
            quad = _wall_quad(P, offsets, v, w)
            s = t / 2.0
            center = 0.5 * ((1 - s) * (quad[0] + quad[3]) + s * (quad[1] + quad[2]))
            axis_w = wall_plane_normal(quad)
            c, a = tuple(map(float, center)), tuple(map(float, axis_w))
            joint.fasteners.append(Fastener(f"joint:{v}", c, a, float(hole_diameter)))
            for f in offsets.edge_faces[tuple(sorted((v, w)))]:
                joint.fasteners.append(Fastener(f"panel:{f}", c, a, float(hole_diameter)))
        joints.append(joint)
    return joints


def attach_wall_fasteners(boxes: list[PanelBox], joints: list[Joint]) -> None:
    """Copy the mating panel markers from the joints onto their panels."""
    by_face = {b.face_index: b for b in boxes}
    for j in joints:
        for fa in j.fasteners:
            if fa.owner.startswith("panel:"):
                by_face[int(fa.owner.split(":")[1])].fasteners.append(fa)


def corner_mismatches(mesh: HexMesh, offsets: OffsetField) -> list[tuple[int, int, float]]:
    """Per wall corner ``(edge vertex, other end, |h n_vertex - h n_edge|)``."""
    out = []
    for e, n_edge in offsets.edge_normals.items():
        for i, j in (e, e[::-1]):
            out.append((i, j, float(np.linalg.norm(offsets.offset(i) - offsets.h * n_edge))))
    return out


def check_polygons(verts: np.ndarray, faces) -> list[str]:
    """Finite coordinates and nonzero area for every polygon."""
    problems = []
    if not np.all(np.isfinite(verts)):
        problems.append("non-finite coordinates")
    for k, f in enumerate(faces):
        area = 0.5 * np.linalg.norm(_newell(verts[list(f)]))
        if area <= 1e-15:
            problems.append(f"polygon {k} has zero area")
    return problems

