import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bohmflow import fields as F
from bohmflow import wavepacket as W
from bohmflow.analysis import plane_flux
from bohmflow.errors import InvalidParameterError
from bohmflow.scenarios import (
    KINDS, BoxParams, Geometry, analytic_visibility, build, build_bubble, build_cavity,
    build_density_operator_mode, build_detector_d3, build_no_device, build_overlap_device, closure_state,
    detector_probabilities,
)

from oracles import gl, gl_panels

G0 = Geometry()


def test_geometry_mirror_symmetric():
    a, b = G0.launch_positions
    assert a[0] == b[0] and a[1] == -b[1]
    p1, p2 = G0.packet(1), G0.packet(2)
    for t in (0.0, G0.t_cross, G0.t_end):
        c1, c2 = p1.center(t), p2.center(t)
        assert c1[0] == c2[0] and abs(c1[1] + c2[1]) < 1e-12
    assert np.allclose(p1.center(G0.t_cross), 0.0, atol=1e-12)
    assert np.allclose(p1.center(G0.t_end), [G0.x_detector, 10.0])


def test_i_window_threshold():
    ta, tb = G0.i_window_times()
    assert ta < G0.t_cross < tb
    # envelope overlap integral equals the threshold at the window edges
    for t in (ta, tb):
        assert W.envelope_overlap(G0.packet(1), G0.packet(2), t) == pytest.approx(1e-6, rel=1e-8)
    xa, xb = G0.i_window()
    assert xa < 0 < xb


def test_labels_follow_upper_lobe_convention():
    assert list(G0.label(np.array([1.0, -1.0]))) == ["D1", "D2"]
    g = Geometry(upper_is_d1=False)
    assert list(g.label(np.array([1.0, -1.0]))) == ["D2", "D1"]


# ---------------------------------------------------------------- detector probabilities

@pytest.mark.parametrize("kind, want", [("no_device", (0.0, 1.0)), ("cavity", (0.5, 0.5)),
                                        ("density_operator_mode", (0.5, 0.5))])
def test_detector_probabilities_examples(kind, want):
    p = detector_probabilities(build(kind, G0))
    assert np.allclose(p, want, atol=1e-12)


def closed_d1_by_quadrature(alpha):
    """Closure algebra written out on a grid: D1 = (a1 - M a2)/sqrt2 in the upper lobe at t_end."""
    g = G0
    t = g.t_end
    sc = build_overlap_device(g, alpha=alpha)
    b1, b2 = sc.state.branches
    c = g.packet(1).center(t)
    w = g.packet(1).width(t)
    x, wx = gl_panels(c[0] - 9 * w, c[0] + 9 * w, 6)
    z, wz = gl_panels(c[1] - 9 * w, c[1] + 9 * w, 6)
    X, Z = np.meshgrid(x, z, indexing="ij")
    r = np.stack([X, Z], -1)
    rm = np.stack([X, -Z], -1)
    cs = [b1.factors[0].gauss_center, b2.factors[0].gauss_center]
    rb, wb = gl_panels(min(cs) - 12, max(cs) + 12, 40)
    a1 = b1.coefficient * W.evaluate(b1.atom, r, t)[..., None] * W.evaluate_box(b1.factors[0], rb)
    ma2 = b2.coefficient * W.evaluate(b2.atom, rm, t)[..., None] * W.evaluate_box(b2.factors[0], rb)
    d1 = (a1 - ma2) / np.sqrt(2)
    return float(np.einsum("i,j,k,ijk->", wx, wz, wb, np.abs(d1) ** 2))


def test_alpha_06_closure_by_quadrature():
    p = detector_probabilities(build_overlap_device(G0, alpha=0.6))
    assert np.allclose(p, (0.2, 0.8), atol=1e-12)
    assert closed_d1_by_quadrature(0.6) == pytest.approx(0.2, abs=1e-9)


@pytest.mark.parametrize("kind", ["no_device", "cavity", "overlap_device"])
def test_closure_state_lobe_weights(kind):
    sc = build(kind, G0, alpha=0.3 + 0.2j)
    s = closure_state(sc.state, G0)
    t = G0.t_end
    c = G0.packet(1).center(t)
    w = G0.packet(1).width(t)
    x, wx = gl_panels(c[0] - 9 * w, c[0] + 9 * w, 6)
    z, wz = gl_panels(c[1] - 9 * w, c[1] + 9 * w, 6)
    X, Z = np.meshgrid(x, z, indexing="ij")
    if s.aux_labels:
        fs = [b.factors[0] for b in s.branches]
        lo = min(f.support()[0] for f in fs)
        hi = max(f.support()[1] for f in fs)
        rb, wb = gl_panels(lo, hi, 40)
        q = np.stack(np.broadcast_arrays(X[..., None], Z[..., None], rb), -1)
        up = np.einsum("i,j,k,ijk->", wx, wz, wb, F.density(s, q, t))
    else:
        up = np.einsum("i,j,ij->", wx, wz, F.density(s, np.stack([X, Z], -1), t))
    assert up == pytest.approx(detector_probabilities(sc)[0], abs=1e-9)
    assert s.norm(t) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.floats(-np.pi, np.pi))
def test_probabilities_sum_to_one(r, phi):
    a = r * np.exp(1j * phi)
    p1, p2 = detector_probabilities(build_overlap_device(G0, alpha=a))
    assert p1 + p2 == 1.0
    assert -1e-12 <= p1 <= 1 + 1e-12
    # closed form for full spatial overlap: P_D1 = (1 - Re alpha)/2
    assert p1 == pytest.approx((1 - a.real) / 2, abs=1e-12)


def test_alpha_continuity_endpoints():
    cav = detector_probabilities(build_cavity(G0))
    nod = detector_probabilities(build_no_device(G0))
    a0 = detector_probabilities(build_overlap_device(G0, alpha=0.0))
    a1 = detector_probabilities(build_overlap_device(G0, alpha=1.0))
    assert np.allclose(a0, cav, atol=1e-10) and np.allclose(a1, nod, atol=1e-10)
    t = G0.flux_time()
    assert abs(plane_flux(build_overlap_device(G0, alpha=0.0), t) - plane_flux(build_cavity(G0), t)) < 1e-10
    assert abs(plane_flux(build_overlap_device(G0, alpha=1.0), t) - plane_flux(build_no_device(G0), t)) < 1e-10
    # small steps in alpha give small changes
    al = np.linspace(0, 1, 41) * 1j
    fl = np.array([plane_flux(build_overlap_device(G0, alpha=a), t) for a in al])
    assert np.max(np.abs(np.diff(fl))) < 0.01


# ---------------------------------------------------------------- builders

def test_builder_errors_and_warnings():
    with pytest.raises(InvalidParameterError):
        build_cavity(G0, BoxParams(n0=2, n1=2))
    with pytest.raises(InvalidParameterError):
        build_overlap_device(G0, alpha=1.2)
    with pytest.raises(InvalidParameterError):
        build("nope", G0)
    assert build_detector_d3(G0, d=16.0).status == "ok"
    assert build_detector_d3(G0, d=6.0).status.startswith("warning")
    assert build_bubble(G0, distance=20.0).status == "ok"
    assert build_bubble(G0, distance=2.0).status.startswith("warning")


def test_cavity_structure():
    sc = build_cavity(G0)
    s = sc.state
    assert s.aux_labels == ("b",)
    assert all(b.coefficient == pytest.approx(2 ** -0.5, rel=1e-15) for b in s.branches)
    assert s.branches[0].factors[0].n == 1 and s.branches[1].factors[0].n == 2


def test_overlap_pair_realises_alpha():
    for a in (0.0, 0.5, 0.5j, -0.3 + 0.1j, 1.0):
        s = build_overlap_device(G0, alpha=a).state
        got = W.box_overlap(s.branches[0].factors[0], s.branches[1].factors[0])
        assert abs(got - a) < 1e-12


def test_density_mode_components_are_independent_currents():
    sc = build_density_operator_mode(G0)
    rng = np.random.default_rng(0)
    q = np.column_stack([rng.normal(0, 1.5, 200), rng.normal(0, 1.5, 200), rng.uniform(0.1, 3.0, 200)])
    t = G0.t_cross
    for (w, comp), arm in zip(sc.pure_components(), (1, 2)):
        p = G0.packet(arm)
        psi = W.evaluate(p, q[:, :2], t)
        j = np.imag(np.conj(psi)[:, None] * W.gradient(p, q[:, :2], t))
        phi2 = W.evaluate_box(comp.branches[0].factors[0], q[:, 2]) ** 2
        assert np.allclose(F.current(comp, q, t), j * phi2[:, None], rtol=1e-12, atol=1e-300)


def atom_velocity_single(arm, q, t):
    p = G0.packet(arm)
    psi = W.evaluate(p, q[:, :2], t)
    return np.imag(np.conj(psi)[:, None] * W.gradient(p, q[:, :2], t)) / np.abs(psi)[:, None] ** 2


@pytest.mark.parametrize("builder, aux", [(build_detector_d3, 16.0), (build_bubble, 20.0)])
def test_branch_selected_fields_equal_density_mode_fields(builder, aux):
    """At 10^4 points the entangled field equals the field of the component
    whose auxiliary support holds the point."""
    s = builder(G0).state
    rng = np.random.default_rng(11)
    n = 10_000
    m = 12_000
    fired = rng.random(m) < 0.5
    q = np.column_stack([rng.normal(0, 1.5, m), rng.normal(0, 1.5, m),
                         np.where(fired, aux, 0.0) + rng.normal(0, 1.0, m)])
    t = G0.t_cross
    # first 10^4 points off the nodes
    keep = np.flatnonzero(F.density(s, q, t) >= F.EPS_P)[:n]
    assert len(keep) == n
    q, fired = q[keep], fired[keep]
    v = F.velocity(s, q, t)
    want = np.where(fired[:, None], atom_velocity_single(2, q, t), atom_velocity_single(1, q, t))
    rel = np.max(np.abs(v[:, :2] - want), axis=1) / np.linalg.norm(want, axis=1)
    assert np.max(rel) < 1e-10
    # branch selection exactness at 1e-12 where supports are disjoint
    assert np.median(rel) < 1e-12
    dm = build_density_operator_mode(G0)
    for (w, comp), sel in zip(dm.pure_components(), (~fired, fired)):
        qq = np.column_stack([q[sel, :2], np.full(sel.sum(), 1.0)])
        vc = F.velocity(comp, qq, t)[:, :2]
        assert np.max(np.abs(vc - v[sel, :2]) / np.linalg.norm(vc, axis=1)[:, None]) < 1e-10


def test_bubble_zero_ionization_limit_reduces_to_no_device():
    """Coincident bound and ionized states (distance 0) give the coherent fields."""
    sc = build_bubble(G0, distance=0.0)
    nd = build_no_device(G0)
    rng = np.random.default_rng(1)
    r = rng.normal(0, 1.5, (200, 2))
    q = np.column_stack([r, rng.normal(0, 1, 200)])
    v = F.velocity(sc.state, q, G0.t_cross)[:, :2]
    vn = F.velocity(nd.state, r, G0.t_cross)
    assert np.max(np.abs(v - vn) / np.linalg.norm(vn, axis=1)[:, None]) < 1e-10
    assert np.allclose(detector_probabilities(sc), (0.0, 1.0), atol=1e-12)


# ---------------------------------------------------------------- visibility

def marginal_by_quadrature(sc, z, t, x=0.0):
    s = sc.state
    cs = [b.factors[0].gauss_center for b in s.branches]
    rb, wb = gl_panels(min(cs) - 12, max(cs) + 12, 60)
    q = np.stack(np.broadcast_arrays(np.full((len(z), 1), x), z[:, None], rb[None, :]), -1)
    return np.einsum("k,ik->i", wb, F.density(s, q, t))


def test_visibility_examples():
    assert analytic_visibility(build_no_device(G0))[0] > 0.9
    assert analytic_visibility(build_cavity(G0))[0] < 0.05
    sc = build_overlap_device(G0, alpha=0.5)
    v, z, P = analytic_visibility(sc)
    Pq = marginal_by_quadrature(sc, z, G0.t_cross)
    vq = (Pq.max() - Pq.min()) / (Pq.max() + Pq.min())
    assert v == pytest.approx(vq, abs=1e-9)
    assert v == pytest.approx(0.5, abs=0.01)


def test_visibility_monotone_in_alpha():
    al = np.linspace(0, 1, 11)
    vs = [analytic_visibility(build_overlap_device(G0, alpha=a))[0] for a in al]
    assert np.all(np.diff(vs) > 0)
    for a, v in zip(al[1:-1:3], vs[1:-1:3]):
        sc = build_overlap_device(G0, alpha=a)
        _, z, _ = analytic_visibility(sc)
        Pq = marginal_by_quadrature(sc, z, G0.t_cross)
        assert v == pytest.approx((Pq.max() - Pq.min()) / (Pq.max() + Pq.min()), abs=1e-9)


def test_all_kinds_build():
    for k in KINDS:
        sc = build(k, G0)
        assert sc.kind == k
        p = detector_probabilities(sc)
        assert p[0] + p[1] == 1.0


def test_i_window_needs_separating_arms():
    from bohmflow.errors import InvalidParameterError as E
    with pytest.raises(E):
        Geometry(speed=2.0, separation=8.0, theta=0.3).i_window_times()
