import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bohmflow import _kernels as K
from bohmflow import fields as F
from bohmflow import wavepacket as W
from bohmflow.errors import NodeDegeneracyError, UnsupportedLayoutError
from bohmflow.scenarios import (
    BoxParams, Geometry, build, build_cavity, build_density_operator_mode, build_no_device, build_overlap_device,
)

from oracles import gl, gl_panels

G0 = Geometry()
SLOW = Geometry(speed=2.0, separation=8.0, theta=0.3)


def region_points(state, g, n, seed=0, spread=1.5):
    rng = np.random.default_rng(seed)
    q = np.zeros((n, state.ndim))
    q[:, :2] = rng.normal(0, spread, (n, 2)) + g.packet(1).center(g.t_cross)
    for k, f in enumerate(state.branches[0].factors):
        if f.kind == "well":
            q[:, 2 + k] = rng.uniform(0.05 * f.L, 0.95 * f.L, n)
        else:
            q[:, 2 + k] = rng.normal(f.gauss_center, 2 * f.sigma_b, n)
    return q


def single_packet_state(p):
    return W.EntangledState((W.Branch(p),))


# ---------------------------------------------------------------- density, current

def test_disjoint_region_density_single_branch():
    s = build_cavity().state
    c = G0.packet(1).center(0.0)
    q = np.array([c[0] + 0.4, c[1] + 0.3, 0.9])
    lower = [b for b in s.branches if b.atom.center0[1] < 0][0]
    want = abs(lower.coefficient * W.evaluate(lower.atom, q[:2], 0.0)) ** 2 * W.evaluate_box(lower.factors[0], 0.9) ** 2
    assert F.density(s, q, 0.0) == pytest.approx(want, rel=1e-13)


@pytest.mark.parametrize("alpha, fringes", [(0.0, False), (1.0, True)])
def test_marginal_cross_terms(alpha, fringes):
    s = build_overlap_device(G0, alpha=alpha).state
    t = G0.t_cross
    z = np.linspace(-0.1, 0.1, 201)
    ra = np.stack([np.zeros_like(z), z], -1)
    m = F.atom_marginal(s, ra, t)
    # explicit integral over the device coordinate
    cs = [b.factors[0].gauss_center for b in s.branches]
    rb, wb = gl_panels(min(cs) - 15, max(cs) + 15, 100)
    q = np.concatenate([np.repeat(ra[:, None], len(rb), 1), np.broadcast_to(rb[None, :, None], (len(z), len(rb), 1))], -1)
    quad = np.einsum("k,ik->i", wb, F.density(s, q, t))
    assert np.allclose(m, quad, rtol=1e-10, atol=1e-14)
    p1, p2 = G0.packet(1), G0.packet(2)
    inc = 0.5 * (abs(W.evaluate(p1, ra, t)) ** 2 + abs(W.evaluate(p2, ra, t)) ** 2)
    coh = 0.5 * abs(W.evaluate(p1, ra, t) + W.evaluate(p2, ra, t)) ** 2
    assert np.allclose(m, coh if fringes else inc, rtol=1e-9, atol=1e-14)


def test_plane_wave_current():
    p = W.make_gaussian((0, 0), (2.5, 0.0), sigma0=1e5)
    j = F.current(single_packet_state(p), np.array([0.0, 0.0]), 0.0)
    P = F.density(single_packet_state(p), np.array([0.0, 0.0]), 0.0)
    assert j[0] / P == pytest.approx(2.5, rel=1e-12)


def test_no_device_current_mirror_symmetry():
    s = build_no_device().state
    rng = np.random.default_rng(1)
    t = G0.t_cross + rng.uniform(-0.01, 0.01, 50)
    x = rng.normal(0, 1.5, 50)
    z = rng.normal(0, 1.5, 50)
    for ti, xi, zi in zip(t, x, z):
        a = F.current(s, np.array([xi, zi]), ti)
        b = F.current(s, np.array([xi, -zi]), ti)
        scale = max(np.max(np.abs(a)), 1e-300)
        assert abs(a[1] + b[1]) <= 1e-12 * scale
        assert abs(a[0] - b[0]) <= 1e-12 * scale
    xs = np.linspace(-3, 3, 31)
    jz0 = F.current(s, np.stack([xs, np.zeros_like(xs)], -1), G0.t_cross)[:, 1]
    assert np.all(jz0 == 0)


def test_static_device_current_zero_before_overlap_nonzero_in_I():
    s = build_cavity().state
    q0 = region_points(s, G0, 200)
    # before overlap: shift onto the launch packets
    q_pre = q0.copy()
    q_pre[:, :2] += G0.packet(1).center(0.0) - G0.packet(1).center(G0.t_cross)
    jb = F.current(s, q_pre, 0.0, "b")[:, 0]
    # only the e^-50 tail overlap of the far packet survives
    assert np.all(np.abs(jb) <= 1e-15 * F.density(s, q_pre, 0.0))
    jb_I = F.current(s, q0, G0.t_cross, "b")[:, 0]
    P = F.density(s, q0, G0.t_cross)
    assert np.mean(np.abs(jb_I) > 1e-8 * P) > 0.5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["no_device", "cavity", "overlap_device", "detector_d3"]))
def test_velocity_times_density_is_current(seed, kind):
    s = build(kind, G0).state
    q = region_points(s, G0, 32, seed)
    P = F.density(s, q, G0.t_cross)
    q = q[P > F.EPS_P]
    v = F.velocity(s, q, G0.t_cross)
    j = F._current_all(s, q, G0.t_cross)[1]
    P = F.density(s, q, G0.t_cross)
    assert np.allclose(v * P[:, None], j, rtol=1e-12, atol=1e-300)
    for blk in s.blocks:
        assert np.allclose(F.velocity(s, q, G0.t_cross, blk) * P[:, None], F.current(s, q, G0.t_cross, blk),
                           rtol=1e-12, atol=1e-300)


def test_velocity_at_packet_centre_and_static_box():
    p = W.make_gaussian((1.0, 2.0), (3.0, -1.0))
    s = single_packet_state(p)
    for t in (0.0, 0.7, 3.0):
        assert np.allclose(F.velocity(s, p.center(t), t), [3.0, -1.0], rtol=1e-13)
    c = build_cavity().state
    q = region_points(c, G0, 50)
    q[:, :2] += G0.packet(1).center(0.0) - G0.packet(1).center(G0.t_cross)
    assert np.max(np.abs(F.velocity(c, q, 0.0, "b"))) < 1e-12


def test_node_degeneracy():
    s = build_no_device().state
    z_node = np.pi / (2 * G0.vz)
    q = np.array([[0.0, z_node], [0.0, 0.0], [1e4, 0.0]])
    with pytest.raises(NodeDegeneracyError) as e:
        F.velocity(s, q, G0.t_cross)
    assert list(e.value.mask) == [True, False, True]
    v = F.velocity(s, q, G0.t_cross, nodes="nan")
    assert np.all(np.isnan(v[0])) and np.all(np.isfinite(v[1]))
    with pytest.raises(NodeDegeneracyError):
        F.quantum_potential(s, q, G0.t_cross)


# ---------------------------------------------------------------- reduced atom current

def _branch_state(b):
    return W.EntangledState((W.Branch(b.atom, b.factors, 1.0),), check_norm=False)


def test_reduced_current_alpha_zero_is_sum_of_branch_currents():
    s = build_cavity().state
    q = region_points(s, G0, 200)[:, :2]
    t = G0.t_cross
    ja = F.reduced_current_atom(s, q, t)
    tot = 0
    for b in s.branches:
        sb = W.EntangledState((W.Branch(b.atom, (), b.coefficient),), check_norm=False)
        tot = tot + F.current(sb, q, t)
    assert np.max(np.abs(ja - tot)) <= 1e-10 * np.max(np.abs(tot))
    # z-component odd in z
    qm = q * [1, -1]
    assert np.allclose(F.reduced_current_atom(s, qm, t)[:, 1], -ja[:, 1], rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("alpha", [0.0, 0.5, 0.5j, 0.3 + 0.4j])
def test_reduced_current_matches_quadrature(alpha):
    if alpha == 0.0:
        s = build_cavity().state
        rb, wb = gl_panels(0, np.pi, 8)
    else:
        s = build_overlap_device(G0, alpha=alpha).state
        cs = [b.factors[0].gauss_center for b in s.branches]
        rb, wb = gl_panels(min(cs) - 15, max(cs) + 15, 60)
    q = region_points(s, G0, 40, 3)[:, :2]
    t = G0.t_cross
    full = np.concatenate([np.repeat(q[:, None], len(rb), 1),
                           np.broadcast_to(rb[None, :, None], (len(q), len(rb), 1))], -1)
    quad = np.einsum("k,ikd->id", wb, F.current(s, full, t, "a"))
    ja = F.reduced_current_atom(s, q, t)
    assert np.max(np.abs(quad - ja)) <= 1e-8 * np.max(np.abs(ja))


def test_reduced_current_layout_error():
    p = W.make_gaussian((0, 0), (1, 0))
    s = W.EntangledState((W.Branch(p, (W.box_well(1), W.box_well(1))),))
    with pytest.raises(UnsupportedLayoutError):
        F.reduced_current_atom(s, np.zeros(2), 0.0)


# ---------------------------------------------------------------- quantum potential, energy

def gaussian_q(p, r, t, m=1.0):
    """-(1/2m) lap R / R for R = exp(-|r - c|^2 / (4 w^2))."""
    c = p.center(t)
    w = p.width(t)
    d2 = np.sum((np.asarray(r) - c) ** 2, axis=-1)
    return -(d2 / (4 * w ** 4) - 1 / w ** 2) / (2 * m)


def test_q_single_packet_oracle_and_richardson():
    p = W.make_gaussian((0, 0), (4.0, 1.0), sigma0=0.9)
    s = single_packet_state(p)
    rng = np.random.default_rng(0)
    for t in (0.0, 1.3):
        r = p.center(t) + rng.normal(0, 1, (50, 2))
        exact = gaussian_q(p, r, t)
        e1 = np.abs(F.quantum_potential(s, r, t, h=2e-2) - exact)
        e2 = np.abs(F.quantum_potential(s, r, t, h=1e-2) - exact)
        ratio = np.linalg.norm(e1) / np.linalg.norm(e2)
        assert 3.5 <= ratio <= 4.5
        assert np.max(np.abs(F.quantum_potential(s, r, t) - exact)) < 1e-5


def test_box_q_levels():
    for n in (1, 2, 3):
        f = W.box_well(n, L=2.0)
        s = W.EntangledState((W.Branch(W.make_gaussian((0, 0), (1, 0)), (f,)),))
        q = np.array([[0.1, -0.2, x] for x in (0.3, 0.77, 1.4)])
        Qb = F.quantum_potential(s, q, 0.5, block="aux0")
        # central-difference truncation of sin(kx): relative (k h)^2 / 12
        tol = 1.2 * (n * np.pi / 2.0 * 1e-3) ** 2 / 12
        assert np.allclose(Qb, f.energy, rtol=tol)
        if n <= 2:
            assert np.allclose(Qb, f.energy, rtol=1e-6)
        es = F.energy_split(s, q, 0.5)
        assert np.max(es.e_kin["aux0"]) < 1e-20
        assert np.allclose(es.q_pot["aux0"], f.energy, rtol=tol)


def test_broad_packet_q_vanishes():
    p = W.make_gaussian((0, 0), (1, 0), sigma0=1e3)
    s = single_packet_state(p)
    assert abs(F.quantum_potential(s, np.array([0.0, 0.0]), 0.0)) < 1e-6


def test_energy_matches_phase_time_derivative():
    p = W.make_gaussian((0, 0), (3.0, 2.0))
    s = single_packet_state(p)
    rng = np.random.default_rng(2)
    t = 0.8
    r = p.center(t) + rng.normal(0, 1, (20, 2))
    es = F.energy_split(s, r, t)
    h = 1e-5
    dS = -np.angle(W.evaluate(p, r, t + h) / W.evaluate(p, r, t - h)) / (2 * h)
    assert np.allclose(es.e_total, dS, rtol=1e-4)
    assert np.allclose(F.phase_time_derivative(s, r, t), dS, rtol=1e-6)
    # plane-wave limit
    pw = W.make_gaussian((0, 0), (3.0, 0.0), sigma0=1e5)
    e = F.energy_split(single_packet_state(pw), np.array([0.0, 0.0]), 0.0)
    assert float(e.e_total) == pytest.approx(4.5, rel=1e-9)


# ---------------------------------------------------------------- continuity

@pytest.mark.parametrize("kind", ["no_device", "dynamic_cavity", "detector_d3", "bubble"])
def test_continuity_residual_small_and_second_order(kind):
    if kind == "dynamic_cavity":
        s = build_cavity(SLOW, BoxParams(include_dynamic_phase=True)).state
    else:
        s = build(kind, SLOW).state
    q = region_points(s, SLOW, 200, 5)
    t = SLOW.t_cross
    P = F.density(s, q, t)
    q = q[P > 1e-6]
    r1 = F.continuity_residual(s, q, t, h=1e-3)
    assert np.max(r1) < 1e-5
    r0 = F.continuity_residual(s, q, t, h=4e-3)
    ratio = np.linalg.norm(r0) / np.linalg.norm(r1)
    assert 12 < ratio < 20


def test_static_device_states_do_not_solve_the_device_equation():
    """Static device factors are held fixed by construction; the two-block
    continuity equation then fails wherever the device current is nonzero."""
    s = build_cavity(SLOW).state
    q = region_points(s, SLOW, 200, 5)
    t = SLOW.t_cross
    ok = F.density(s, q, t) > 1e-6
    r = F.continuity_residual(s, q[ok], t)
    assert np.max(r) > 1e-3
    d = build_cavity(SLOW, BoxParams(include_dynamic_phase=True)).state
    assert np.max(F.continuity_residual(d, q[ok], t)) < 1e-5


def test_continuity_negative_control():
    """Coefficient flips sign on one branch between t-h and t+h."""
    s = build_no_device(SLOW).state
    b0, b1 = s.branches
    bad = W.EntangledState((b0, W.Branch(b1.atom, b1.factors, -b1.coefficient)), check_norm=False)
    assert s.branches[0].coefficient != 1 / np.sqrt(2)
    q = region_points(s, SLOW, 100, 6)
    t, h = SLOW.t_cross, 1e-3
    dPdt = (F.density(bad, q, t + h) - F.density(s, q, t - h)) / (2 * h)
    div = 0
    for d in range(2):
        e = np.zeros(2)
        e[d] = h
        div = div + (F.current(s, q + e, t)[:, d] - F.current(s, q - e, t)[:, d]) / (2 * h)
    resid = np.abs(dPdt + div)
    assert np.max(resid) > 1e3 * 1e-5


def test_grid_rows_layout():
    s = build_cavity().state
    head, rows = F.grid_rows(s, G0.t_cross, np.linspace(-1, 1, 3), np.linspace(-1, 1, 4), (1.0,))
    assert head == ["x", "z", "r_b", "t", "P", "jx", "jz", "jb", "Q", "resid"]
    assert rows.shape == (12, 10)
    assert np.all(rows[:4, 0] == -1) and np.allclose(rows[:4, 1], np.linspace(-1, 1, 4))


# ---------------------------------------------------------------- compiled kernel vs numpy

@pytest.mark.parametrize("kind", ["no_device", "cavity", "overlap_device", "detector_d3", "bubble"])
def test_kernel_velocity_matches_numpy(kind):
    s = build(kind, G0).state
    q = np.ascontiguousarray(region_points(s, G0, 500, 9))
    t = G0.t_cross
    ov = np.empty_like(q)
    op = np.empty(len(q))
    K.fast_velocity_many(q, t, K.dim_marker(s.ndim - 2), *s._packed, s.masses, ov, op)
    P = F.density(s, q, t)
    ok = P > 1e-8
    v = F.velocity(s, q[ok], t)
    # phases of order k x ~ 1e3 rad bound the agreement
    assert np.max(np.abs(op - P)) <= 1e-11 * np.max(P)
    # near-node cancellation limits agreement to the scale of the full velocity
    rel = np.max(np.abs(ov[ok] - v), axis=1) / np.linalg.norm(v, axis=1)
    assert np.max(rel) < 1e-9


def test_density_operator_components_are_single_branch():
    sc = build_density_operator_mode()
    assert sc.is_mixture
    ws = [w for w, _ in sc.pure_components()]
    assert ws == [0.5, 0.5]
    for _, comp in sc.pure_components():
        assert len(comp.branches) == 1
