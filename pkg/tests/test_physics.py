from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_mesh
from hexform.errors import CoincidentEndpoints, EmptyAnchorSet, NoConvergence, NonFiniteState
from hexform.physics import (
    BEND,
    SHEAR,
    STRETCH,
    Particle,
    SimulationParams,
    Spring,
    SpringDefaults,
    SpringSystem,
    accumulate_forces,
    build_spring_system,
    classify_springs,
    damping_force,
    gravity_force,
    simulate_to_equilibrium,
    spring_force,
    step_rk4,
    with_params,
)
from hexform.pipeline import default_config, resolve_anchors
from oracles import RING, spring_energy_equilibrium


# ------------------------------------------------------------------ forces

@pytest.mark.parametrize(
    "K, L, x1, x2, expected",
    [
        (1.0, 1.0, (0, 0, 0), (2, 0, 0), (1, 0, 0)),
        (3.0, 1.0, (0, 0, 0), (0, 1, 0), (0, 0, 0)),
        (2.0, 1.0, (0, 0, 0), (0.5, 0, 0), (-1.0, 0, 0)),
    ],
)
def test_spring_force_examples(K, L, x1, x2, expected):
    f = spring_force(Spring(0, 1, K, L), x1, x2)
    np.testing.assert_allclose(f, expected, atol=1e-12)


def test_spring_force_coincident():
    with pytest.raises(CoincidentEndpoints):
        spring_force(Spring(0, 1, 1.0, 1.0), (1, 2, 3), (1, 2, 3))


@given(
    st.lists(st.floats(-10, 10), min_size=6, max_size=6),
    st.floats(0.1, 1e3),
    st.floats(0.0, 5.0),
)
def test_spring_force_antisymmetric_and_axial(coords, K, L):
    x1, x2 = np.array(coords[:3]), np.array(coords[3:])
    if np.linalg.norm(x1 - x2) < 1e-6:
        return
    s = Spring(0, 1, K, L)
    f12 = spring_force(s, x1, x2)
    f21 = spring_force(s, x2, x1)
    assert np.all(f12 == -f21)
    assert np.linalg.norm(np.cross(f12, x1 - x2)) <= 1e-9 * (1 + np.linalg.norm(f12) * np.linalg.norm(x1 - x2))


@pytest.mark.parametrize("m, g, expected", [(1.0, 9.81, -9.81), (0.5, 9.81, -4.905), (1.0, 0.0, 0.0)])
def test_gravity_examples(m, g, expected):
    np.testing.assert_allclose(gravity_force(Particle(m, np.zeros(3)), g), [0, 0, expected], atol=1e-15)


@pytest.mark.parametrize(
    "v, c, expected",
    [((1, 0, 0), 0.5, (-0.5, 0, 0)), ((0, 0, 0), 3.0, (0, 0, 0)), ((4, -2, 1), 0.0, (0, 0, 0))],
)
def test_damping_examples(v, c, expected):
    f = damping_force(Particle(1.0, np.zeros(3), np.array(v, float)), c)
    np.testing.assert_allclose(f, expected, atol=1e-15)


def test_accumulate_rest_state_is_zero():
    mesh = make_mesh(6)
    sys = build_spring_system(mesh, anchors=[0], params=SimulationParams(g=0.0))
    np.testing.assert_allclose(accumulate_forces(sys), 0.0, atol=1e-12)


def test_accumulate_pair_and_gravity():
    parts = [Particle(1.0, np.zeros(3)), Particle(1.0, np.array([2.0, 0, 0]))]
    sys = SpringSystem.from_particles(parts, [Spring(0, 1, 1.0, 1.0)], SimulationParams(g=0.0))
    F = accumulate_forces(sys)
    np.testing.assert_array_equal(F[0], -F[1])
    np.testing.assert_allclose(F[0], [1, 0, 0])

    lone = SpringSystem.from_particles([Particle(1.0, np.zeros(3))], [], SimulationParams())
    np.testing.assert_allclose(accumulate_forces(lone), [[0, 0, -9.81]])


def test_accumulate_matches_pairwise_sum():
    rng = np.random.default_rng(3)
    mesh = make_mesh(9)
    sys = build_spring_system(mesh, anchors=[0], params=SimulationParams(g=9.81, global_damping=0.7))
    sys.x = sys.x + rng.normal(scale=0.05, size=sys.x.shape)
    sys.v = rng.normal(size=sys.x.shape)
    F = np.zeros_like(sys.x)
    for s in sys.springs:
        f = spring_force(s, sys.x[s.i], sys.x[s.j])
        F[s.i] += f
        F[s.j] -= f
    for k in range(sys.n_particles):
        p = sys.particle(k)
        F[k] += gravity_force(p, 9.81) + damping_force(p, 0.7)
    np.testing.assert_allclose(accumulate_forces(sys), F, atol=1e-12)


# -------------------------------------------------------------- integrator

def _orbit(dt: float) -> SpringSystem:
    """Unit mass on a zero-length unit spring: x(t) = (cos t, sin t, 0)."""
    parts = [
        Particle(1.0, np.zeros(3), anchored=True),
        Particle(1.0, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])),
    ]
    params = SimulationParams(g=0.0, dt=dt, global_damping=0.0)
    return SpringSystem.from_particles(parts, [Spring(0, 1, 1.0, 0.0)], params)


def _orbit_error(dt: float, T: float) -> float:
    sys = _orbit(dt)
    for _ in range(int(round(T / dt))):
        step_rk4(sys)
    return float(np.linalg.norm(sys.x[1] - [np.cos(T), np.sin(T), 0.0]))


def test_oscillator_returns_after_one_period():
    sys = _orbit(0.01)
    steps = int(2 * np.pi / 0.01)
    for _ in range(steps):
        step_rk4(sys)
    sys = with_params(sys, dt=2 * np.pi - steps * 0.01)
    step_rk4(sys)
    assert np.linalg.norm(sys.x[1] - [1.0, 0.0, 0.0]) <= 1e-5


def test_oscillator_fourth_order():
    dts = [0.02, 0.01, 0.005, 0.0025]
    errs = [_orbit_error(dt, 20.48) for dt in dts]
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert 3.8 <= slope <= 4.2
    assert errs[0] / errs[1] == pytest.approx(16, rel=0.05)


def test_all_anchored_is_frozen():
    mesh = make_mesh(6)
    sys = build_spring_system(mesh, anchors=range(mesh.n_vertices))
    x0 = sys.x.copy()
    for _ in range(5):
        step_rk4(sys)
    np.testing.assert_array_equal(sys.x, x0)
    assert not np.any(sys.v)


def test_momentum_conserved_without_external_forces():
    rng = np.random.default_rng(11)
    mesh = make_mesh(9)
    sys = build_spring_system(mesh, params=SimulationParams(g=0.0, global_damping=0.0))
    sys.x = sys.x + rng.normal(scale=0.1, size=sys.x.shape)
    sys.v = rng.normal(size=sys.x.shape)
    p0 = (sys.mass[:, None] * sys.v).sum(axis=0)
    for _ in range(50):
        step_rk4(sys)
        p = (sys.mass[:, None] * sys.v).sum(axis=0)
        assert np.linalg.norm(p - p0) <= 1e-10
        p0 = p


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_is_reported():
    parts = [Particle(1.0, np.zeros(3), anchored=True), Particle(1.0, np.array([1.0, 0, 0]))]
    sys = SpringSystem.from_particles(parts, [Spring(0, 1, 1e308, 0.5)], SimulationParams(g=0.0, dt=1.0))
    with pytest.raises(NonFiniteState):
        step_rk4(sys)


# ------------------------------------------------------------- equilibrium

def test_flat_rest_mesh_is_already_in_equilibrium():
    mesh = make_mesh(9)
    sys = build_spring_system(mesh, params=SimulationParams(g=0.0))
    res = simulate_to_equilibrium(sys)
    assert res.steps == 0
    assert res.max_residual_force <= 1e-12
    np.testing.assert_allclose(res.positions, mesh.positions, atol=1e-15)


def test_hanging_particle_extension():
    K, L, m, g = 500.0, 1.0, 1.0, 9.81
    parts = [Particle(1.0, np.zeros(3), anchored=True), Particle(m, np.array([0.0, 0.0, -L]))]
    params = SimulationParams(g=g, force_tolerance=1e-8, invert_after_solve=False)
    sys = SpringSystem.from_particles(parts, [Spring(0, 1, K, L)], params)
    res = simulate_to_equilibrium(sys)
    assert abs(-res.positions[1, 2] - L - m * g / K) <= 1e-9
    # the support carries the hanging load and the anchor's own weight
    np.testing.assert_allclose(res.reactions[0], [0, 0, 2 * m * g], atol=1e-7)


def test_empty_anchor_set():
    mesh = make_mesh(3)
    with pytest.raises(EmptyAnchorSet):
        build_spring_system(mesh, anchors=[])
    parts = [Particle(1.0, np.zeros(3))]
    with pytest.raises(EmptyAnchorSet):
        simulate_to_equilibrium(SpringSystem.from_particles(parts, []))


def test_step_cap():
    mesh = make_mesh(6)
    sys = build_spring_system(mesh, anchors=mesh.corner_vertices(), params=SimulationParams(max_steps=5))
    with pytest.raises(NoConvergence) as info:
        simulate_to_equilibrium(sys)
    assert info.value.residual > sys.params.force_tolerance


def test_undamped_system_rejected():
    mesh = make_mesh(6)
    sys = build_spring_system(mesh, anchors=[0], params=SimulationParams(global_damping=0.0))
    with pytest.raises(ValueError):
        simulate_to_equilibrium(sys)


def test_trace_rows():
    mesh = make_mesh(6)
    sys = build_spring_system(mesh, anchors=mesh.corner_vertices())
    res = simulate_to_equilibrium(sys, trace_every=10)
    steps = [r[0] for r in res.trace]
    assert steps[0] == 0 and steps[-1] == res.steps
    assert all(b - a == 10 for a, b in zip(steps[:-2], steps[1:-1]))
    assert res.trace[-1][2] == res.max_residual_force


@pytest.fixture(scope="module")
def hanging9():
    cfg = default_config()
    mesh = make_mesh(9)
    params = SimulationParams(invert_after_solve=False)
    sys = build_spring_system(mesh, cfg.spring_defaults(), resolve_anchors(mesh, "corners"), params)
    return mesh, sys, simulate_to_equilibrium(sys.copy())


def test_n9_converges_and_sags(hanging9):
    mesh, sys, res = hanging9
    assert res.max_residual_force <= 1e-4
    free = ~sys.anchored
    assert np.all(res.positions[free, 2] < 0)


def test_n9_matches_energy_minimizer(hanging9):
    mesh, sys, res = hanging9
    springs = [(s.i, s.j, s.stiffness, s.rest_length) for s in sys.springs]
    X = spring_energy_equilibrium(sys.x, springs, sys.mass, sys.params.g, sys.anchored)
    assert np.max(np.abs(X - res.positions)) <= 1e-4


def test_inversion_mirrors_about_anchor_height(hanging9):
    mesh, sys, res = hanging9
    inverted = simulate_to_equilibrium(with_params(sys, invert_after_solve=True))
    np.testing.assert_allclose(inverted.positions[:, :2], res.positions[:, :2])
    np.testing.assert_allclose(inverted.positions[:, 2], -res.positions[:, 2], atol=1e-15)


# ---------------------------------------------------------------- springs

def _uv_spring_oracle(mesh):
    """Stretch = ring edges; distance-2 pairs classified by lattice direction."""
    rings = [[tuple(int(x) for x in mesh.uv[i]) for i in f] for f in mesh.faces]
    edges = {frozenset((r[k], r[(k + 1) % 6])) for r in rings for k in range(6)}
    nbrs: dict = {}
    for e in edges:
        a, b = tuple(e)
        nbrs.setdefault(a, set()).add(b)
        nbrs.setdefault(b, set()).add(a)
    bend, shear = set(), set()
    for mid, ns in nbrs.items():
        for a in ns:
            for b in ns:
                if a >= b:
                    continue
                da = (a[0] - mid[0], a[1] - mid[1])
                db = (b[0] - mid[0], b[1] - mid[1])
                if da[0] * db[1] - da[1] * db[0] == 0:
                    bend.add(frozenset((a, b)))
                elif any(a in r and b in r for r in rings):
                    shear.add(frozenset((a, b)))
    return len(edges), len(shear), len(bend)


@pytest.mark.parametrize("n", [3, 6, 9, 12])
def test_spring_classification_matches_lattice_oracle(n):
    mesh = make_mesh(n)
    kinds = classify_springs(mesh)
    assert (len(kinds[STRETCH]), len(kinds[SHEAR]), len(kinds[BEND])) == _uv_spring_oracle(mesh)


def test_single_hexagon_springs():
    # every distance-2 pair on a hexagon turns by 60 degrees, so none is straight
    turns = [RING[k][0] * RING[(k + 2) % 6][1] - RING[k][1] * RING[(k + 2) % 6][0] for k in range(6)]
    assert all(t != 0 for t in turns)
    kinds = classify_springs(make_mesh(3))
    assert (len(kinds[STRETCH]), len(kinds[SHEAR]), len(kinds[BEND])) == (6, 6, 0)


def test_spring_stiffness_and_rest_length():
    mesh = make_mesh(6)
    d = SpringDefaults(k_stretch=7.0, k_shear=3.0, k_bend=2.0)
    sys = build_spring_system(mesh, d, anchors=[0])
    for s in sys.springs:
        assert s.stiffness == {STRETCH: 7.0, SHEAR: 3.0, BEND: 2.0}[s.kind]
        assert s.rest_length == pytest.approx(np.linalg.norm(mesh.positions[s.i] - mesh.positions[s.j]))


def test_classification_without_lattice_uses_positions():
    from hexform.hexgrid import HexMesh

    mesh = make_mesh(9)
    plain = HexMesh.from_faces(mesh.faces, mesh.positions)
    assert classify_springs(plain) == classify_springs(mesh)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_forces_equivariant_under_rotation(seed):
    from conftest import rotation

    rng = np.random.default_rng(seed)
    R = rotation(rng.normal(size=3), rng.uniform(0, 2 * np.pi))
    mesh = make_mesh(6)
    sys = build_spring_system(mesh, anchors=[0], params=SimulationParams(g=0.0))
    sys.x = sys.x + rng.normal(scale=0.05, size=sys.x.shape)
    F = accumulate_forces(sys)
    rot = sys.copy()
    rot.x = sys.x @ R.T
    np.testing.assert_allclose(accumulate_forces(rot), F @ R.T, atol=1e-10)
