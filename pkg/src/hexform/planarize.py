"""Minimal-displacement planarization of polygon faces.

Solves

    min_Q  sum_i |p_i - q_i|^2   s.t.  n_j . q_i + d_j = 0  for every corner (i, j)

with a quadratic penalty on the corner constraints.  Blocks are updated in
turn, each to its exact minimizer: planes by a least-squares fit per face,
points by a per-vertex 3x3 solve.  The penalty weight grows by 10x whenever
the objective stalls.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DegenerateFace, LengthMismatch, NoConvergence

log = logging.getLogger(__name__)


def _orient(n: np.ndarray) -> np.ndarray:
    for c in n:
        if abs(c) > 1e-15:
            return n if c > 0 else -n
    return n


def fit_plane(points) -> tuple[np.ndarray, float]:
    """Least-squares plane ``n . x + d = 0`` with ``|n| = 1``.

    The normal is the direction of least spread about the centroid, signed so
    that its first nonzero component is positive.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateFace("need at least 3 points to fit a plane")
    centroid = pts.mean(axis=0)
    X = pts - centroid
    # SVD of the centred points keeps the small singular values accurate to
    # machine precision (the 3x3 scatter matrix would square the error)
    _, s, Vt = np.linalg.svd(X, full_matrices=True)
    spread = np.zeros(3)
    spread[: len(s)] = s / np.sqrt(len(pts))
    if spread[1] < 1e-12:
        raise DegenerateFace("points are collinear or coincident")
    n = Vt[2].copy()
    if spread[1] - spread[2] <= 1e-9 * spread[1]:
        # the two smallest spreads tie, so any unit vector in their span is
        # optimal: take the first coordinate axis projected into that span
        B = Vt[1:3]
        for axis in np.eye(3):
            p = B.T @ (B @ axis)
            if np.linalg.norm(p) > 1e-6:
                n = p / np.linalg.norm(p)
                break
    n = _orient(n)
    return n, float(-n @ centroid)


def planarity_error(face: Sequence[int], positions) -> float:
    """Largest distance from a face vertex to the face's best-fit plane."""
    pts = np.asarray(positions, dtype=float)[list(face)]
    n, d = fit_plane(pts)
    return float(np.max(np.abs(pts @ n + d)))


def displacement_objective(P, Q) -> float:
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape != Q.shape:
        raise LengthMismatch(f"control has {len(P)} points, solution has {len(Q)}")
    return float(np.sum((P - Q) ** 2))


@dataclass(frozen=True)
class PlanarizeSettings:
    planarity_tolerance: float | None = None  # meters; None -> rel_tolerance * bbox diagonal
    rel_tolerance: float = 1e-6
    max_iterations: int = 500
    w_close: float = 1.0
    w_plan: float = 10.0
    escalation: float = 10.0
    max_weight_ratio: float = 1e12
    stall: float = 1e-8

    def __post_init__(self):
        if self.planarity_tolerance is not None and not self.planarity_tolerance > 0:
            raise ValueError("planarity tolerance must be positive")
        if not self.rel_tolerance > 0:
            raise ValueError("relative tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.w_close > 0 and self.w_plan > 0):
            raise ValueError("weights must be positive")

    def tolerance_for(self, P: np.ndarray) -> float:
        if self.planarity_tolerance is not None:
            return self.planarity_tolerance
        return self.rel_tolerance * bbox_diagonal(P)


def bbox_diagonal(P) -> float:
    P = np.asarray(P, dtype=float)
    return float(np.linalg.norm(P.max(axis=0) - P.min(axis=0)))


@dataclass
class PlanarizationProblem:
    P: np.ndarray
    faces: list[tuple[int, ...]]
    Q: np.ndarray = None
    normals: np.ndarray = None
    offsets: np.ndarray = None
    pinned: tuple[int, ...] = ()

    def __post_init__(self):
        self.P = np.array(self.P, dtype=float).reshape(-1, 3)
        self.faces = [tuple(int(i) for i in f) for f in self.faces]
        for j, f in enumerate(self.faces):
            if len(f) < 3:
                raise DegenerateFace(f"face {j} has fewer than 3 vertices")
        self.Q = self.P.copy() if self.Q is None else np.array(self.Q, dtype=float)
        if self.Q.shape != self.P.shape:
            raise LengthMismatch("P and Q differ in size")
        if self.normals is None:
            self.normals = np.zeros((len(self.faces), 3))
            self.offsets = np.zeros(len(self.faces))
        self._ci = np.array([i for f in self.faces for i in f], dtype=np.int64)
        self._cj = np.array([j for j, f in enumerate(self.faces) for _ in f], dtype=np.int64)

    @property
    def corners(self) -> set[tuple[int, int]]:
        return set(zip(self._ci.tolist(), self._cj.tolist()))

    def fit_planes(self) -> None:
        for j, f in enumerate(self.faces):
            self.normals[j], self.offsets[j] = fit_plane(self.Q[list(f)])

    def residuals(self, Q=None) -> np.ndarray:
        Q = self.Q if Q is None else Q
        return np.einsum("ij,ij->i", Q[self._ci], self.normals[self._cj]) + self.offsets[self._cj]

    def energy(self, w_plan: float, w_close: float) -> float:
        r = self.residuals()
        return float(w_plan * r @ r + w_close * np.sum((self.Q - self.P) ** 2))

    def solve_points(self, w_plan: float, w_close: float) -> None:
        """Exact minimizer over Q with planes fixed (independent per vertex).

        Solved for the displacement ``q - p`` so the large penalty never
        multiplies absolute coordinates.
        """
        nv = len(self.P)
        n = self.normals[self._cj]
        rp = np.einsum("ij,ij->i", self.P[self._ci], n) + self.offsets[self._cj]
        M = np.zeros((nv, 3, 3))
        np.add.at(M, self._ci, n[:, :, None] * n[:, None, :])
        b = np.zeros((nv, 3))
        np.add.at(b, self._ci, -rp[:, None] * n)
        A = M + (w_close / w_plan) * np.eye(3)
        delta = np.linalg.solve(A, b[:, :, None])[:, :, 0]
        if self.pinned:
            delta[list(self.pinned)] = 0.0
        self.Q = self.P + delta

    def max_planarity_error(self) -> float:
        return max(planarity_error(f, self.Q) for f in self.faces)


@dataclass
class PlanarizeResult:
    Q: np.ndarray
    iterations: int
    max_planarity_error: float
    tolerance: float
    # (iteration, step, E, w_plan) after each block update
    objective_trace: list[tuple[int, str, float, float]] = field(default_factory=list)
    # (iteration, objective, max planarity error, w_plan) once per iteration
    iteration_trace: list[tuple[int, float, float, float]] = field(default_factory=list)
    normals: np.ndarray | None = None
    offsets: np.ndarray | None = None


def _tangent_basis(n: np.ndarray) -> np.ndarray:
    """(F, 3, 2) orthonormal bases of the planes orthogonal to each normal."""
    out = np.empty((len(n), 3, 2))
    for j, nj in enumerate(n):
        a = np.eye(3)[int(np.argmin(np.abs(nj)))]
        t1 = np.cross(nj, a)
        t1 /= np.linalg.norm(t1)
        out[j, :, 0] = t1
        out[j, :, 1] = np.cross(nj, t1)
    return out


def _joint_step(prob: PlanarizationProblem, w_plan: float, w_close: float, e0: float) -> bool:
    """Damped Gauss-Newton step on (Q, planes) together; kept only if E drops.

    The linearized penalty problem is solved in its saddle-point form so the
    system stays well conditioned for very large ``w_plan``.
    """
    nv, nf, nc = len(prob.P), len(prob.faces), len(prob._ci)
    ci, cj = prob._ci, prob._cj
    T = _tangent_basis(prob.normals)
    r = prob.residuals()
    nq, nvar = 3 * nv, 3 * nv + 3 * nf

    rows = np.repeat(np.arange(nc), 6)
    cols = np.empty((nc, 6), dtype=np.int64)
    vals = np.empty((nc, 6))
    cols[:, :3] = 3 * ci[:, None] + np.arange(3)
    vals[:, :3] = prob.normals[cj]
    cols[:, 3:5] = nq + 3 * cj[:, None] + np.arange(2)
    vals[:, 3:5] = np.einsum("ck,ckm->cm", prob.Q[ci], T[cj])
    cols[:, 5] = nq + 3 * cj + 2
    vals[:, 5] = 1.0
    J = sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(nc, nvar))

    pinned = np.zeros(nvar, dtype=bool)
    for i in prob.pinned:
        pinned[3 * i:3 * i + 3] = True
    if pinned.any():
        J = J @ sp.diags((~pinned).astype(float))
    g = np.zeros(nvar)
    g[:nq] = w_close * (prob.Q - prob.P).ravel()
    g[pinned] = 0.0

    base = np.zeros(nvar)
    base[:nq] = w_close
    base[pinned] = 1.0
    mu = 1e-9 * w_close
    for _ in range(8):
        K = sp.bmat([[sp.diags(base + mu), J.T], [J, -sp.identity(nc) / w_plan]], format="csc")
        try:
            sol = spla.spsolve(K, np.concatenate([-g, -r]))
        except RuntimeError:
            sol = np.full(nvar + nc, np.nan)
        step = sol[:nvar]
        if np.all(np.isfinite(step)):
            step[pinned] = 0.0
            Q = prob.Q + step[:nq].reshape(nv, 3)
            plane = step[nq:].reshape(nf, 3)
            n = prob.normals + np.einsum("jkm,jm->jk", T, plane[:, :2])
            scale = np.linalg.norm(n, axis=1)
            n /= scale[:, None]
            d = (prob.offsets + plane[:, 2]) / scale
            old = prob.Q, prob.normals, prob.offsets
            prob.Q, prob.normals, prob.offsets = Q, n, d
            if prob.energy(w_plan, w_close) < e0:
                return True
            prob.Q, prob.normals, prob.offsets = old
        mu = max(mu * 100.0, 1e-6 * w_close)
    return False


def planarize(P, faces, settings: PlanarizeSettings = PlanarizeSettings(), pinned: Sequence[int] = ()) -> PlanarizeResult:
    """Move the points as little as possible so that every face is planar.

    Each iteration runs three updates of the penalized energy
    ``E = w_plan * sum r_ij^2 + w_close * sum |q_i - p_i|^2``: an exact plane
    fit per face (``"local"``), an exact point solve (``"global"``) and a
    safeguarded joint Gauss-Newton step (``"joint"``).  None of them can
    raise E, so ``objective_trace`` is non-increasing between entries that
    share a ``w_plan`` value.
    """
    prob = PlanarizationProblem(P, faces, pinned=tuple(int(i) for i in pinned))
    tol = settings.tolerance_for(prob.P)
    w_close = settings.w_close
    w_plan = settings.w_plan
    w_cap = settings.max_weight_ratio * w_close

    prob.fit_planes()
    err = prob.max_planarity_error()
    e = prob.energy(w_plan, w_close)
    result = PlanarizeResult(prob.Q.copy(), 1, err, tol)
    result.objective_trace.append((0, "local", e, w_plan))
    if err <= tol:
        result.iteration_trace.append((1, e, err, w_plan))
        result.normals, result.offsets = prob.normals.copy(), prob.offsets.copy()
        return result

    last = None
    for it in range(1, settings.max_iterations + 1):
        if it > 1:
            prob.fit_planes()
            result.objective_trace.append((it, "local", prob.energy(w_plan, w_close), w_plan))
        prob.solve_points(w_plan, w_close)
        e = prob.energy(w_plan, w_close)
        result.objective_trace.append((it, "global", e, w_plan))
        if _joint_step(prob, w_plan, w_close, e):
            e = prob.energy(w_plan, w_close)
        result.objective_trace.append((it, "joint", e, w_plan))

        err = prob.max_planarity_error()
        result.iteration_trace.append((it, e, err, w_plan))
        log.debug("iter %d  E=%.6e  err=%.3e  w=%.1e", it, e, err, w_plan)
        if err <= tol:
            break
        if last is not None and abs(last - e) <= settings.stall * abs(e) and w_plan < w_cap:
            w_plan = min(w_plan * settings.escalation, w_cap)
            last = None
            continue
        last = e
    else:
        result.Q = prob.Q.copy()
        raise NoConvergence(
            f"planarity error {err:.3e} m above tolerance {tol:.3e} m after "
            f"{settings.max_iterations} iterations", err,
        )

    result.Q = prob.Q.copy()
    result.iterations = it
    result.max_planarity_error = err
    result.normals, result.offsets = prob.normals.copy(), prob.offsets.copy()
    return result
