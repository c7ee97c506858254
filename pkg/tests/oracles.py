"""Independent reference computations used by the tests.

Nothing here calls into the code under test except for plain data access.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import minimize

RING = [(0, -1), (1, -1), (1, 0), (0, 1), (-1, 1), (-1, 0)]


def brute_force_hexagons(n: int) -> list[tuple[tuple[int, int], frozenset[tuple[int, int]]]]:
    """Every lattice node whose full ring lies inside the triangle and that
    sits on the centre sublattice (u = v mod 3, v >= 1)."""
    inside = lambda u, v: u >= 0 and v >= 0 and u + v <= n  # noqa: E731
    out = []
    for u in range(n + 1):
        for v in range(n + 1 - u):
            ring = [(u + du, v + dv) for du, dv in RING]
            if all(inside(*p) for p in ring) and (u - v) % 3 == 0 and v >= 1:
                out.append(((u, v), frozenset(ring)))
    return out


def shared_edge_pairs(rings: list[list[tuple[int, int]]]) -> set[tuple[int, int]]:
    """All face pairs with a common consecutive vertex pair, by exhaustive scan."""
    def edges(r):
        return {frozenset((r[k], r[(k + 1) % len(r)])) for k in range(len(r))}

    es = [edges(r) for r in rings]
    return {(a, b) for a, b in itertools.combinations(range(len(rings)), 2) if es[a] & es[b]}


def _unit_from_angles(theta: float, phi: float) -> np.ndarray:
    return np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])


def plane_search(points, starts: int = 12, seed: int = 0) -> tuple[np.ndarray, float, float]:
    """Minimize sum (n.x + d)^2 over sphere angles and d by multistart BFGS.

    Returns (normal, d, max |n.x + d|).
    """
    pts = np.asarray(points, float)
    rng = np.random.default_rng(seed)

    def f(x):
        n = _unit_from_angles(x[0], x[1])
        return float(np.sum((pts @ n + x[2]) ** 2))

    best = None
    for _ in range(starts):
        x0 = [rng.uniform(0, np.pi), rng.uniform(0, 2 * np.pi), 0.0]
        r = minimize(f, x0, method="BFGS", options={"gtol": 1e-13})
        if best is None or r.fun < best.fun:
            best = r
    best = minimize(f, best.x, method="Nelder-Mead", options={"xatol": 1e-14, "fatol": 1e-22, "maxiter": 20000})
    n = _unit_from_angles(best.x[0], best.x[1])
    return n, float(best.x[2]), float(np.max(np.abs(pts @ n + best.x[2])))


def single_face_constrained_min(points) -> float:
    """min sum |p - q|^2 with all q on one plane: the best plane's squared residual."""
    n, d, _ = plane_search(points)
    return float(np.sum((np.asarray(points) @ n + d) ** 2))


def hinge_constrained_min(P, faces, shared) -> float:
    """Two faces sharing edge ``shared``: optimize both shared points and a
    hinge angle per face; the other vertices drop onto their face plane."""
    P = np.asarray(P, float)
    a, b = shared
    rest = [[i for i in f if i not in shared] for f in faces]

    def f(x):
        qa, qb = x[:3], x[3:6]
        t = qb - qa
        t = t / np.linalg.norm(t)
        e1 = np.cross(t, [0.0, 0.0, 1.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(t, e1)
        total = np.sum((P[a] - qa) ** 2) + np.sum((P[b] - qb) ** 2)
        for k, rs in enumerate(rest):
            n = np.cos(x[6 + k]) * e2 + np.sin(x[6 + k]) * e1
            total += np.sum(((P[rs] - qa) @ n) ** 2)
        return total

    best = None
    for t0, t1 in itertools.product((-0.3, 0.0, 0.3), repeat=2):
        r = minimize(f, np.concatenate([P[a], P[b], [t0, t1]]), method="BFGS", options={"gtol": 1e-13})
        if best is None or r.fun < best.fun:
            best = r
    return float(best.fun)


def spring_energy_equilibrium(x0, springs, mass, g, anchored) -> np.ndarray:
    """Minimize spring energy plus gravitational potential with L-BFGS."""
    x0 = np.asarray(x0, float)
    free = ~np.asarray(anchored)
    i = np.array([s[0] for s in springs])
    j = np.array([s[1] for s in springs])
    K = np.array([s[2] for s in springs])
    L = np.array([s[3] for s in springs])

    def energy(z):
        x = x0.copy()
        x[free] = z.reshape(-1, 3)
        d = x[i] - x[j]
        length = np.linalg.norm(d, axis=1)
        e = 0.5 * np.sum(K * (length - L) ** 2) + g * np.sum(mass * x[:, 2])
        coef = (K * (length - L) / length)[:, None] * d
        grad = np.zeros_like(x)
        np.add.at(grad, i, coef)
        np.add.at(grad, j, -coef)
        grad[:, 2] += g * mass
        return e, grad[free].ravel()

    r = minimize(energy, x0[free].ravel(), jac=True, method="L-BFGS-B",
                 options={"maxiter": 100000, "gtol": 1e-10, "ftol": 1e-16, "maxcor": 50})
    out = x0.copy()
    out[free] = r.x.reshape(-1, 3)
    return out
