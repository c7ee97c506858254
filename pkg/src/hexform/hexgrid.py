"""Triangular lattice and the hexagonal face map built on top of it.

A base triangle ABC is subdivided into ``n`` segments per edge.  Lattice
node ``(u, v)`` sits at ``A + (u/n)(B - A) + (v/n)(C - A)`` for
``u, v >= 0`` and ``u + v <= n``.  Hexagons are centred on the nodes with
``u % 3 == v % 3``; the centre itself is not a mesh vertex, the six ring
nodes returned by :func:`hex_neighbors` are.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

from .errors import DegenerateTriangle, InvalidGrid, NotFactorOfThree

# ring order around a centre, counter-clockwise when ABC is
HEX_OFFSETS: tuple[tuple[int, int], ...] = (
    (0, -1),
    (1, -1),
    (1, 0),
    (0, 1),
    (-1, 1),
    (-1, 0),
)


@dataclass(frozen=True)
class TriGrid:
    corners: np.ndarray  # (3, 3): A, B, C
    n: int
    uv: np.ndarray  # (N, 2) int
    positions: np.ndarray  # (N, 3)

    def __post_init__(self):
        for arr in (self.corners, self.uv, self.positions):
            arr.flags.writeable = False

    @property
    def edge_length(self) -> float:
        return float(np.linalg.norm(self.corners[1] - self.corners[0]))

    def index(self) -> dict[tuple[int, int], int]:
        return {(int(u), int(v)): k for k, (u, v) in enumerate(self.uv)}

    def contains(self, u: int, v: int) -> bool:
        return u >= 0 and v >= 0 and u + v <= self.n


def _check_subdivision(rows: int, cols: int) -> None:
    # stricter than an AND of the two tests: either bad dimension breaks the stride
    if rows % 3 != 0 or cols % 3 != 0:
        raise NotFactorOfThree(f"NOT a factor of 3 (rows={rows}, cols={cols})")


def subdivide_triangle(A, B, C, n: int) -> TriGrid:
    """Subdivide triangle ABC into ``n`` segments per edge.

    Nodes are enumerated row-major: ``u`` outer, ``v`` inner.
    """
    A, B, C = (np.asarray(p, dtype=float).reshape(3) for p in (A, B, C))
    if int(n) != n or n < 3:
        raise NotFactorOfThree(f"subdivision must be a positive multiple of 3, got {n}")
    n = int(n)
    _check_subdivision(n, n)
    area = 0.5 * np.linalg.norm(np.cross(B - A, C - A))
    if area < 1e-12:
        raise DegenerateTriangle(f"triangle area {area:.3e} m^2 is below 1e-12 m^2")

    uv = np.array([(u, v) for u in range(n + 1) for v in range(n + 1 - u)], dtype=np.int64)
    s = uv[:, :1] / n
    t = uv[:, 1:] / n
    positions = A + s * (B - A) + t * (C - A)
    return TriGrid(np.stack([A, B, C]), n, uv, positions)


def equilateral_corners(side: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Corners of an equilateral triangle in z=0, centroid at the origin.

    B and C are mirror images under ``x -> -x`` so that swapping ``u`` and
    ``v`` is an exact reflection of the lattice.
    """
    h = side * np.sqrt(3.0) / 2.0
    A = np.array([0.0, 2.0 * h / 3.0, 0.0])
    B = np.array([-side / 2.0, -h / 3.0, 0.0])
    C = np.array([side / 2.0, -h / 3.0, 0.0])
    return A, B, C


def hex_neighbors(u: int, v: int) -> list[tuple[int, int]]:
    """The six ring nodes around ``(u, v)`` in cyclic order."""
    return [(u + du, v + dv) for du, dv in HEX_OFFSETS]


def hex_centers(rows: int, cols: int) -> tuple[list[tuple[int, int]], int]:
    """Hexagon centres in construction order plus the loop-body count.

    Row ``u`` starts at the smallest ``v >= 1`` congruent to ``u`` mod 3 and
    strides by 3; each upper row has one column fewer.
    """
    _check_subdivision(rows, cols)
    centers: list[tuple[int, int]] = []
    ops = 0
    for u in range(1, rows):
        ops += 1
        v_start = u % 3 if u % 3 != 0 else 3
        cols -= 1
        for v in range(v_start, cols, 3):
            ops += 1
            centers.append((u, v))
    return centers, ops


def face_adjacency(faces: Sequence[Sequence[int]]) -> nx.Graph:
    """Faces are adjacent when they share at least one polygon edge."""
    by_edge: dict[tuple[int, int], list[int]] = defaultdict(list)
    for f, verts in enumerate(faces):
        k = len(verts)
        for a in range(k):
            e = tuple(sorted((verts[a], verts[(a + 1) % k])))
            by_edge[e].append(f)
    g = nx.Graph()
    g.add_nodes_from(range(len(faces)))
    for fs in by_edge.values():
        for a in range(len(fs)):
            for b in range(a + 1, len(fs)):
                if fs[a] != fs[b]:
                    g.add_edge(fs[a], fs[b])
    return g


def vertex_graph(faces: Sequence[Sequence[int]], n_vertices: int) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(range(n_vertices))
    for verts in faces:
        k = len(verts)
        g.add_edges_from((verts[a], verts[(a + 1) % k]) for a in range(k))
    return g


@dataclass
class HexMesh:
    """Polygon mesh with a dense face map and the two graphs built from it.

    ``adjacency`` links faces that share an edge; ``graph`` is the
    vertex/edge net of the hexagons.  ``uv`` and ``subdivision`` are only
    present for meshes that came from a lattice.
    """

    face_map: dict[int, tuple[int, ...]]
    positions: np.ndarray
    adjacency: nx.Graph = field(repr=False)
    graph: nx.Graph = field(repr=False)
    uv: np.ndarray | None = None
    subdivision: int | None = None
    construction_ops: int = 0

    @classmethod
    def from_faces(cls, faces: Iterable[Sequence[int]], positions, uv=None, subdivision=None) -> "HexMesh":
        faces = [tuple(int(i) for i in f) for f in faces]
        positions = np.array(positions, dtype=float).reshape(-1, 3)
        return cls(
            face_map=dict(enumerate(faces)),
            positions=positions,
            adjacency=face_adjacency(faces),
            graph=vertex_graph(faces, len(positions)),
            uv=None if uv is None else np.asarray(uv, dtype=np.int64),
            subdivision=subdivision,
        )

    @property
    def faces(self) -> list[tuple[int, ...]]:
        return [self.face_map[f] for f in sorted(self.face_map)]

    @property
    def n_faces(self) -> int:
        return len(self.face_map)

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    def with_positions(self, positions) -> "HexMesh":
        positions = np.array(positions, dtype=float).reshape(self.positions.shape)
        return HexMesh(
            dict(self.face_map), positions, self.adjacency, self.graph,
            self.uv, self.subdivision, self.construction_ops,
        )

    def edge_faces(self) -> dict[tuple[int, int], list[int]]:
        """Undirected edge (sorted pair) -> incident faces, in face order."""
        out: dict[tuple[int, int], list[int]] = defaultdict(list)
        for f, verts in enumerate(self.faces):
            k = len(verts)
            for a in range(k):
                out[tuple(sorted((verts[a], verts[(a + 1) % k])))].append(f)
        return dict(out)

    def vertex_faces(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for f, verts in enumerate(self.faces):
            for i in verts:
                out[i].append(f)
        return out

    def boundary_vertices(self) -> list[int]:
        bv = set()
        for e, fs in self.edge_faces().items():
            if len(fs) == 1:
                bv.update(e)
        return sorted(bv)

    def corner_vertices(self) -> list[int]:
        """Mesh vertices next to the three base-triangle corners.

        The triangle corners are hexagon centres, so each corner is
        represented by its two lattice neighbours (six vertices in total).
        """
        if self.uv is None or self.subdivision is None:
            raise InvalidGrid("corner vertices need lattice (u, v) data")
        n = self.subdivision
        wanted = {(1, 0), (0, 1), (n - 1, 0), (n - 1, 1), (0, n - 1), (1, n - 1)}
        return [k for k, (u, v) in enumerate(self.uv) if (int(u), int(v)) in wanted]


def _validate_grid(grid: TriGrid) -> None:
    n = grid.n
    if n < 3 or n % 3 != 0:
        raise InvalidGrid(f"subdivision {n} is not a positive multiple of 3")
    expected = {(u, v) for u in range(n + 1) for v in range(n + 1 - u)}
    got = [(int(u), int(v)) for u, v in grid.uv]
    if len(got) != len(expected) or set(got) != expected:
        raise InvalidGrid("lattice nodes do not cover u, v >= 0, u + v <= n exactly")
    if grid.positions.shape != (len(got), 3) or not np.all(np.isfinite(grid.positions)):
        raise InvalidGrid("positions must be a finite (N, 3) array")
    A, B, C = grid.corners
    normal = np.cross(B - A, C - A)
    normal = normal / np.linalg.norm(normal)
    edge = grid.edge_length
    if np.max(np.abs((grid.positions - A) @ normal)) >= 1e-12 * edge:
        raise InvalidGrid("lattice nodes leave the plane of ABC")
    idx = grid.index()
    lengths = [
        np.linalg.norm(grid.positions[idx[(u + du, v + dv)]] - grid.positions[k])
        for k, (u, v) in enumerate(got)
        for du, dv in ((1, 0), (0, 1), (-1, 1))
        if (u + du, v + dv) in idx
    ]
    if lengths and (max(lengths) - min(lengths)) > 1e-9 * max(lengths):
        raise InvalidGrid("lattice edge lengths are not uniform")


def build_hex_mesh(grid: TriGrid) -> HexMesh:
    """Extract the hexagon face map from a lattice."""
    _validate_grid(grid)
    centers, ops = hex_centers(grid.n, grid.n)
    node = grid.index()

    rings = [[node[p] for p in hex_neighbors(u, v)] for u, v in centers]
    used = sorted({k for ring in rings for k in ring})
    remap = {old: new for new, old in enumerate(used)}
    faces = [tuple(remap[k] for k in ring) for ring in rings]

    mesh = HexMesh.from_faces(faces, grid.positions[used], uv=grid.uv[used], subdivision=grid.n)
    mesh.construction_ops = ops
    mesh.positions.flags.writeable = False
    return mesh


def validate_hex_mesh(mesh: HexMesh) -> list[str]:
    """Return one message per violated mesh invariant (empty when valid)."""
    report: list[str] = []
    keys = sorted(mesh.face_map)
    if keys != list(range(len(keys))):
        report.append(f"non-contiguous face indices: {keys}")

    nv = mesh.n_vertices
    offsets = set(HEX_OFFSETS)
    for f in keys:
        verts = mesh.face_map[f]
        if len(verts) != 6 or len(set(verts)) != 6:
            report.append(f"face {f}: expected 6 distinct vertices, got {list(verts)}")
            continue
        if any(i < 0 or i >= nv for i in verts):
            report.append(f"face {f}: vertex index out of range")
            continue
        if mesh.uv is not None:
            for a in range(6):
                i, j = verts[a], verts[(a + 1) % 6]
                d = tuple(int(x) for x in mesh.uv[j] - mesh.uv[i])
                if d not in offsets:
                    report.append(f"face {f}: vertices {i} and {j} are not lattice neighbours")
            # ring must surround a single centre (offsets sum to zero)
            ring_uv = mesh.uv[list(verts)]
            total = ring_uv.sum(axis=0)
            centre = total // 6
            ring = {tuple(int(x) for x in r - centre) for r in ring_uv}
            if np.any(total % 6) or ring != offsets:
                report.append(f"face {f}: vertices do not form a hexagon ring")

    if report:
        return report

    faces = mesh.faces
    expected = face_adjacency(faces)
    if set(mesh.adjacency.nodes) != set(range(len(faces))):
        report.append("adjacency nodes differ from face indices")
    got_edges = {tuple(sorted(e)) for e in mesh.adjacency.edges}
    want_edges = {tuple(sorted(e)) for e in expected.edges}
    for e in sorted(got_edges - want_edges):
        report.append(f"adjacency edge {e}: faces share no edge")
    for e in sorted(want_edges - got_edges):
        report.append(f"adjacency edge {e}: missing for faces sharing an edge")

    boundary = set(mesh.boundary_vertices())
    g = vertex_graph(faces, nv)
    for i in range(nv):
        deg = g.degree[i]
        if deg > 3:
            report.append(f"vertex {i}: valence {deg} exceeds 3")
        elif i not in boundary and deg != 3 and deg > 0:
            report.append(f"vertex {i}: interior valence {deg} != 3")
    if not np.all(np.isfinite(mesh.positions)):
        report.append("non-finite vertex positions")
    return report
