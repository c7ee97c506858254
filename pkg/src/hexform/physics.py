"""Particle-spring form finding.

Particles carry mass, position and velocity; springs follow Hooke's law
``F1 = K (L - |x1 - x2|) (x1 - x2) / |x1 - x2|``.  Gravity acts as
``(0, 0, -m g)`` and motion is resisted by linear drag ``-c v`` plus an
optional axial dashpot per spring.  The system is integrated with classical
RK4 at a fixed step until the residual force on every free particle drops
below a tolerance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import CoincidentEndpoints, EmptyAnchorSet, NoConvergence, NonFiniteState
from .hexgrid import HexMesh

log = logging.getLogger(__name__)

STRETCH, SHEAR, BEND = "stretch", "shear", "bend"
_EPS_LEN = 1e-12


@dataclass
class Particle:
    mass: float
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    anchored: bool = False


@dataclass(frozen=True)
class Spring:
    i: int
    j: int
    stiffness: float
    rest_length: float
    damping: float = 0.0
    kind: str = STRETCH


@dataclass(frozen=True)
class SimulationParams:
    g: float = 9.81
    dt: float = 0.005
    global_damping: float = 5.0
    force_tolerance: float = 1e-4
    max_steps: int = 200_000
    invert_after_solve: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.force_tolerance > 0:
            raise ValueError("force_tolerance must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.global_damping < 0:
            raise ValueError("global_damping must be >= 0")


@dataclass(frozen=True)
class SpringDefaults:
    mass: float = 1.0
    k_stretch: float = 500.0
    k_shear: float = 50.0
    k_bend: float = 50.0
    spring_damping: float = 0.0

    def stiffness(self, kind: str) -> float:
        return {STRETCH: self.k_stretch, SHEAR: self.k_shear, BEND: self.k_bend}[kind]


@dataclass
class SpringSystem:
    """Struct-of-arrays particle system; ``springs`` mirrors the index arrays."""

    mass: np.ndarray  # (N,)
    x: np.ndarray  # (N, 3)
    v: np.ndarray  # (N, 3)
    anchored: np.ndarray  # (N,) bool
    springs: list[Spring]
    params: SimulationParams = field(default_factory=SimulationParams)

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        self.x = np.array(self.x, dtype=float).reshape(-1, 3)
        self.v = np.array(self.v, dtype=float).reshape(-1, 3)
        self.anchored = np.asarray(self.anchored, dtype=bool)
        n = len(self.mass)
        if np.any(self.mass <= 0):
            raise ValueError("particle masses must be positive")
        for s in self.springs:
            if not (0 <= s.i < n and 0 <= s.j < n) or s.i == s.j:
                raise ValueError(f"bad spring endpoints ({s.i}, {s.j})")
        self._si = np.array([s.i for s in self.springs], dtype=np.int64)
        self._sj = np.array([s.j for s in self.springs], dtype=np.int64)
        self._sk = np.array([s.stiffness for s in self.springs], dtype=float)
        self._sl = np.array([s.rest_length for s in self.springs], dtype=float)
        self._sc = np.array([s.damping for s in self.springs], dtype=float)
        self.v[self.anchored] = 0.0

    @classmethod
    def from_particles(cls, particles: Sequence[Particle], springs, params=None) -> "SpringSystem":
        return cls(
            mass=[p.mass for p in particles],
            x=[p.position for p in particles],
            v=[p.velocity for p in particles],
            anchored=[p.anchored for p in particles],
            springs=list(springs),
            params=params or SimulationParams(),
        )

    @property
    def n_particles(self) -> int:
        return len(self.mass)

    def particle(self, k: int) -> Particle:
        return Particle(float(self.mass[k]), self.x[k].copy(), self.v[k].copy(), bool(self.anchored[k]))

    def copy(self) -> "SpringSystem":
        return SpringSystem(self.mass.copy(), self.x.copy(), self.v.copy(), self.anchored.copy(),
                            list(self.springs), self.params)

    def kinetic_energy(self) -> float:
        return float(0.5 * np.sum(self.mass * np.einsum("ij,ij->i", self.v, self.v)))


def spring_force(s: Spring, x1, x2) -> np.ndarray:
    """Hooke force on the particle at ``x1``; the force on ``x2`` is its negation."""
    d = np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)
    length = float(np.linalg.norm(d))
    if length <= _EPS_LEN:
        raise CoincidentEndpoints(f"spring ({s.i}, {s.j}) endpoints coincide")
    return s.stiffness * (s.rest_length - length) * d / length


def gravity_force(p: Particle, g: float) -> np.ndarray:
    return np.array([0.0, 0.0, -p.mass * g])


def damping_force(p: Particle, c_global: float) -> np.ndarray:
    if c_global < 0:
        raise ValueError("damping coefficient must be >= 0")
    return -c_global * np.asarray(p.velocity, dtype=float)


def _forces(sys: SpringSystem, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    n = sys.n_particles
    p = sys.params
    F = np.zeros((n, 3))
    F[:, 2] -= sys.mass * p.g
    F -= p.global_damping * v
    if len(sys._si):
        d = x[sys._si] - x[sys._sj]
        length = np.sqrt(np.einsum("ij,ij->i", d, d))
        if np.any(length <= _EPS_LEN):
            bad = int(np.argmax(length <= _EPS_LEN))
            raise CoincidentEndpoints(f"spring ({sys._si[bad]}, {sys._sj[bad]}) endpoints coincide")
        unit = d / length[:, None]
        mag = sys._sk * (sys._sl - length)
        if np.any(sys._sc):
            rel = np.einsum("ij,ij->i", v[sys._si] - v[sys._sj], unit)
            mag = mag - sys._sc * rel
        f = mag[:, None] * unit
        # bincount sums in index order, so the result is deterministic
        for c in range(3):
            F[:, c] += np.bincount(sys._si, weights=f[:, c], minlength=n)
            F[:, c] -= np.bincount(sys._sj, weights=f[:, c], minlength=n)
    return F


def accumulate_forces(sys: SpringSystem) -> np.ndarray:
    """Net force on every particle, anchored ones included (reactions)."""
    return _forces(sys, sys.x, sys.v)


def _rk4(sys: SpringSystem, F0: np.ndarray | None = None) -> None:
    dt = sys.params.dt
    free = ~sys.anchored
    inv_m = np.where(free, 1.0 / sys.mass, 0.0)[:, None]
    vmask = free[:, None].astype(float)
    x0, v0 = sys.x, sys.v

    def accel(x, v, F=None):
        if F is None:
            F = _forces(sys, x, v)
        return F * inv_m

    k1x, k1v = v0 * vmask, accel(x0, v0, F0)
    k2x, k2v = (v0 + 0.5 * dt * k1v) * vmask, accel(x0 + 0.5 * dt * k1x, v0 + 0.5 * dt * k1v)
    k3x, k3v = (v0 + 0.5 * dt * k2v) * vmask, accel(x0 + 0.5 * dt * k2x, v0 + 0.5 * dt * k2v)
    k4x, k4v = (v0 + dt * k3v) * vmask, accel(x0 + dt * k3x, v0 + dt * k3v)
    x = x0 + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    v = v0 + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise NonFiniteState(f"state became non-finite (dt={dt} too large?)")
    x[sys.anchored] = x0[sys.anchored]
    v[sys.anchored] = 0.0
    sys.x, sys.v = x, v


def step_rk4(sys: SpringSystem) -> SpringSystem:
    """Advance one fixed RK4 step and return the updated system (in place)."""
    _rk4(sys)
    return sys


@dataclass
class EquilibriumResult:
    positions: np.ndarray
    steps: int
    max_residual_force: float
    reactions: np.ndarray
    trace: list[tuple[int, float, float]]


def _residual(F: np.ndarray, free: np.ndarray) -> float:
    if not np.any(free):
        return 0.0
    return float(np.max(np.linalg.norm(F[free], axis=1)))


def simulate_to_equilibrium(
    sys: SpringSystem,
    trace_every: int = 0,
    observer: Callable[[int, float, float], None] | None = None,
) -> EquilibriumResult:
    """Integrate until the static force (springs and gravity) on every free
    particle is within tolerance.

    ``trace_every`` > 0 records ``(step, kinetic energy, residual)`` rows.
    The returned positions are mirrored in z about the mean anchor height
    when ``params.invert_after_solve`` is set; ``sys`` itself keeps the
    hanging shape.
    """
    p = sys.params
    if p.g != 0 and not np.any(sys.anchored):
        raise EmptyAnchorSet("gravity is on but no particle is anchored")
    if p.global_damping <= 0 and not (sys.springs and np.all(sys._sc > 0)):
        raise ValueError("simulation needs global damping or damped springs to settle")

    free = ~sys.anchored
    trace: list[tuple[int, float, float]] = []
    step = 0
    dashpots = bool(np.any(sys._sc))
    while True:
        F = _forces(sys, sys.x, sys.v)
        # equilibrium is judged on the static load: drag only hides imbalance
        F_static = _forces(sys, sys.x, np.zeros_like(sys.v)) if dashpots else F + p.global_damping * sys.v
        res = _residual(F_static, free)
        if trace_every and step % trace_every == 0:
            trace.append((step, sys.kinetic_energy(), res))
        if observer is not None:
            observer(step, sys.kinetic_energy(), res)
        if res <= p.force_tolerance:
            break
        if step >= p.max_steps:
            raise NoConvergence(f"no equilibrium after {step} steps (residual {res:.3e} N)", res)
        _rk4(sys, F)
        step += 1
    if trace_every and (not trace or trace[-1][0] != step):
        trace.append((step, sys.kinetic_energy(), res))
    log.info("equilibrium after %d steps, residual %.3e N", step, res)

    positions = sys.x.copy()
    if p.invert_after_solve and np.any(sys.anchored):
        z0 = float(np.mean(sys.x[sys.anchored, 2]))
        positions[:, 2] = 2.0 * z0 - positions[:, 2]
    reactions = -F_static[sys.anchored]
    return EquilibriumResult(positions, step, res, reactions, trace)


def _collinear(a, b, c, tol: float = 1e-9) -> bool:
    ab = np.asarray(b, float) - np.asarray(a, float)
    bc = np.asarray(c, float) - np.asarray(b, float)
    return float(np.linalg.norm(np.cross(ab, bc))) <= tol * float(np.linalg.norm(ab) * np.linalg.norm(bc))


def classify_springs(mesh: HexMesh) -> dict[str, list[tuple[int, int]]]:
    """Pairs for each spring kind, sorted and free of duplicates.

    Stretch pairs are mesh edges.  Pairs two edges apart are bend springs
    when the path through the middle vertex is straight in the lattice and
    shear springs otherwise; shear pairs must also lie on a common face.
    Straightness uses (u, v) when the mesh has it, else the positions.
    """
    coords = mesh.uv.astype(float) if mesh.uv is not None else mesh.positions
    if coords.shape[1] == 2:
        coords = np.column_stack([coords, np.zeros(len(coords))])
    g = mesh.graph
    stretch = sorted(tuple(sorted(e)) for e in g.edges)
    face_sets = [set(f) for f in mesh.faces]
    vertex_faces = mesh.vertex_faces()
    edge_set = set(stretch)

    shear: set[tuple[int, int]] = set()
    bend: set[tuple[int, int]] = set()
    for mid in range(mesh.n_vertices):
        nbrs = sorted(g.neighbors(mid))
        for a in range(len(nbrs)):
            for b in range(a + 1, len(nbrs)):
                i, j = nbrs[a], nbrs[b]
                pair = (min(i, j), max(i, j))
                if pair in edge_set:
                    continue
                if _collinear(coords[i], coords[mid], coords[j]):
                    bend.add(pair)
                elif any(i in face_sets[f] and j in face_sets[f] for f in vertex_faces[mid]):
                    shear.add(pair)
    shear -= bend
    return {STRETCH: stretch, SHEAR: sorted(shear), BEND: sorted(bend)}


def build_spring_system(
    mesh: HexMesh,
    defaults: SpringDefaults = SpringDefaults(),
    anchors: Sequence[int] = (),
    params: SimulationParams = SimulationParams(),
) -> SpringSystem:
    """Particles at the mesh vertices joined by stretch, shear and bend springs.

    Rest lengths are the initial distances.
    """
    for name in ("mass", "k_stretch", "k_shear", "k_bend"):
        if not getattr(defaults, name) > 0:
            raise ValueError(f"{name} must be positive")
    anchors = sorted({int(a) for a in anchors})
    if params.g != 0 and not anchors:
        raise EmptyAnchorSet("gravity is on but the anchor set is empty")
    x = np.array(mesh.positions, dtype=float)
    springs = []
    for kind, pairs in classify_springs(mesh).items():
        for i, j in pairs:
            L = float(np.linalg.norm(x[i] - x[j]))
            springs.append(Spring(i, j, defaults.stiffness(kind), L, defaults.spring_damping, kind))
    anchored = np.zeros(len(x), dtype=bool)
    anchored[anchors] = True
    return SpringSystem(np.full(len(x), defaults.mass), x, np.zeros_like(x), anchored, springs, params)


def with_params(sys: SpringSystem, **changes) -> SpringSystem:
    out = sys.copy()
    out.params = replace(sys.params, **changes)
    return out
