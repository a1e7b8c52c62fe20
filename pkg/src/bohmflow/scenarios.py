"""Interferometer geometry and the six experimental configurations.

Arm 1 is the lower path (launched at z < 0, moving up); arm 2 is the upper
path and carries whichever device the scenario installs.  The two arms are
exact mirror images under z -> -z and cross at the origin at ``t_cross``.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidParameterError
from .fields import atom_marginal
from .wavepacket import (
    Branch, EntangledState, box_overlap, box_well, displaced_gaussian, make_gaussian, normalized,
    packet_overlap, pointer_state,
)

KINDS = ("no_device", "cavity", "overlap_device", "detector_d3", "bubble", "density_operator_mode")
D3_MIN_RATIO = 12.0
BETA_MAX = 38.0   # exp(-BETA_MAX**2/2) underflows to 0


@dataclass(frozen=True)
class Geometry:
    theta: float = 0.15
    separation: float = 20.0
    speed: float = 500.0
    sigma0: float = 1.0
    mass: float = 1.0
    t_launch: float = 0.0
    upper_is_d1: bool = True
    overlap_threshold: float = 1e-6

    def __post_init__(self):
        if not 0 < self.theta < np.pi / 2:
            raise InvalidParameterError("theta must lie in (0, pi/2)")
        for name in ("separation", "speed", "sigma0", "mass"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be > 0")

    @property
    def vz(self):
        return self.speed * np.sin(self.theta)

    @property
    def t_cross(self):
        return self.t_launch + 0.5 * self.separation / self.vz

    @property
    def t_end(self):
        """Symmetric exit time: packets separated as at launch."""
        return 2 * self.t_cross - self.t_launch

    @property
    def x_launch(self):
        return -self.speed * np.cos(self.theta) * (self.t_cross - self.t_launch)

    @property
    def launch_positions(self):
        return (self.x_launch, -0.5 * self.separation), (self.x_launch, 0.5 * self.separation)

    @property
    def x_detector(self):
        return self.speed * np.cos(self.theta) * (self.t_end - self.t_cross)

    def packet(self, arm):
        v = (self.speed * np.cos(self.theta), self.vz)
        p1 = make_gaussian(self.launch_positions[0], v, self.sigma0, self.t_launch, self.mass)
        return p1 if arm == 1 else p1.mirrored()

    def fringe_period(self):
        return np.pi / (self.mass * self.vz)

    def flux_time(self):
        """Time when packet centres are 2 sigma0 apart on approach."""
        return self.t_cross - self.sigma0 / self.vz

    def _overlap(self, t):
        d = self.separation * abs(self.t_cross - t) / (self.t_cross - self.t_launch)
        w = self.packet(1).width(t)
        return np.exp(-d * d / (8 * w * w))

    def i_window_times(self):
        """Times at which the arm packets' envelope overlap crosses the threshold."""
        thr = self.overlap_threshold
        f = lambda t: self._overlap(t) - thr
        tc, tl = self.t_cross, self.t_launch
        t_in = tl if f(tl) > 0 else brentq(f, tl, tc, xtol=1e-14)
        hi = tc + (tc - tl)
        for _ in range(60):
            if f(hi) <= 0:
                break
            hi = tc + 2 * (hi - tc)
        else:
            raise InvalidParameterError("packet spreading keeps the arms overlapping; no exit from I")
        t_out = brentq(f, tc, hi, xtol=1e-14)
        return t_in, t_out

    def i_window(self):
        """Region I as an x-interval (packet-centre positions at the window times)."""
        t_in, t_out = self.i_window_times()
        vx = self.speed * np.cos(self.theta)
        return vx * (t_in - self.t_cross), vx * (t_out - self.t_cross)

    def label(self, z):
        """Detector label of an outgoing lobe from the sign of z."""
        up = np.asarray(z) > 0
        return np.where(up == self.upper_is_d1, "D1", "D2")


@dataclass(frozen=True)
class Scenario:
    kind: str
    geometry: Geometry
    state: EntangledState = None
    components: tuple = ()
    params: dict = field(default_factory=dict, compare=False)
    status: str = "ok"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown scenario kind {self.kind!r}")
        if self.state is None:
            ws = [w for w, _ in self.components]
            if len(ws) < 2 or abs(sum(ws) - 1.0) > 1e-12 or min(ws) < 0:
                raise InvalidParameterError("mixture needs >= 2 components with weights summing to 1")

    @property
    def is_mixture(self):
        return self.state is None

    def pure_components(self):
        return ((1.0, self.state),) if self.state is not None else self.components

    def marginal(self, r_a, t):
        return sum(w * atom_marginal(s, r_a, t) for w, s in self.pure_components())

    @property
    def aux_labels(self):
        return self.pure_components()[0][1].aux_labels


def branch_arm(branch):
    return 1 if branch.atom.center0[1] < 0 else 2


def _sq(x):
    return x / np.sqrt(2.0)


@dataclass(frozen=True)
class BoxParams:
    n0: int = 1
    n1: int = 2
    L: float = np.pi
    mass_b: float = 1.0
    include_dynamic_phase: bool = False

    def levels(self):
        return (box_well(self.n0, self.L, self.mass_b, self.include_dynamic_phase),
                box_well(self.n1, self.L, self.mass_b, self.include_dynamic_phase))


def build_no_device(geometry=Geometry()):
    g = geometry
    st = normalized((Branch(g.packet(1), (), _sq(1)), Branch(g.packet(2), (), _sq(1))))
    return Scenario("no_device", g, st)


def build_cavity(geometry=Geometry(), box=BoxParams()):
    g = geometry
    phi0, phiE = box.levels()
    if abs(box_overlap(phi0, phiE)) > 1e-12:
        raise InvalidParameterError("cavity levels must be orthogonal; use an overlap device")
    st = normalized((Branch(g.packet(1), (phi0,), _sq(1)),
                         Branch(g.packet(2), (phiE,), _sq(1))), ("b",))
    return Scenario("cavity", g, st, params={"E0": phi0.energy, "E1": phiE.energy})


def overlap_pair(alpha, sigma_b=1.0):
    """Device states eta_0, eta_1 with <eta_0|eta_1> = alpha."""
    alpha = complex(alpha)
    a = abs(alpha)
    if a > 1 + 1e-15:
        raise InvalidParameterError(f"|alpha| must be <= 1, got {a}")
    beta = BETA_MAX if a == 0 else min(BETA_MAX, np.sqrt(max(0.0, -2.0 * np.log(min(a, 1.0)))))
    eta0 = displaced_gaussian(0.0, sigma_b)
    eta1 = displaced_gaussian(beta, sigma_b, phase=float(np.angle(alpha)) if a > 0 else 0.0)
    return eta0, eta1


def build_overlap_device(geometry=Geometry(), alpha=0.5, sigma_b=1.0):
    g = geometry
    eta0, eta1 = overlap_pair(alpha, sigma_b)
    got = box_overlap(eta0, eta1)
    if abs(got - complex(alpha)) > 1e-12:
        raise InvalidParameterError(f"device overlap {got} does not realise alpha={alpha}")
    st = normalized((Branch(g.packet(1), (eta0,), _sq(1)),
                         Branch(g.packet(2), (eta1,), _sq(1))), ("b",))
    return Scenario("overlap_device", g, st, params={"alpha": complex(alpha), "sigma_b": sigma_b})


def build_detector_d3(geometry=Geometry(), d=16.0, sigma=1.0):
    g = geometry
    lam_u = pointer_state(0.0, sigma)
    lam_f = pointer_state(d, sigma)
    status = "ok"
    if d / sigma < D3_MIN_RATIO:
        status = "warning: pointer states overlap; not a valid irreversible detector"
    st = normalized((Branch(g.packet(1), (lam_u,), _sq(1)),
                         Branch(g.packet(2), (lam_f,), _sq(1))), ("c",))
    return Scenario("detector_d3", g, st, params={"d": d, "sigma": sigma,
                                                  "overlap": abs(box_overlap(lam_u, lam_f))}, status=status)


def build_bubble(geometry=Geometry(), distance=20.0, sigma=1.0):
    """One ionizable atom beside arm 2; r_e is the electron coordinate."""
    g = geometry
    bound = pointer_state(0.0, sigma)
    ionized = pointer_state(distance, sigma)
    ov = abs(box_overlap(bound, ionized))
    status = "ok" if ov < 1e-12 else "warning: ionization incomplete, interference persists"
    st = normalized((Branch(g.packet(1), (bound,), _sq(1)),
                         Branch(g.packet(2), (ionized,), _sq(1))), ("e",))
    return Scenario("bubble", g, st, params={"distance": distance, "sigma": sigma, "overlap": ov},
                    status=status)


def build_density_operator_mode(geometry=Geometry(), box=BoxParams()):
    g = geometry
    phi0, phiE = box.levels()
    c1 = EntangledState((Branch(g.packet(1), (phi0,), 1.0),), ("b",))
    c2 = EntangledState((Branch(g.packet(2), (phiE,), 1.0),), ("b",))
    return Scenario("density_operator_mode", g, None, ((0.5, c1), (0.5, c2)))


def _mixing_terms(state, t):
    """Norms of the two arm sub-states and their mirrored cross overlap."""
    G = state.factor_overlaps(t)
    n = {1: 0.0, 2: 0.0}
    x = 0j
    br = state.branches
    for i, bi in enumerate(br):
        for j, bj in enumerate(br):
            ai, aj = branch_arm(bi), branch_arm(bj)
            if G[i, j] == 0:
                continue
            cc = np.conj(bi.coefficient) * bj.coefficient * G[i, j]
            if ai == aj:
                n[ai] += (cc * packet_overlap(bi.atom, bj.atom, t)).real
            elif ai == 1:
                x += cc * packet_overlap(bi.atom, bj.atom.mirrored(), t)
    return n[1], n[2], x


def detector_probabilities(scenario, t_close=None):
    """Readout probabilities after a 50/50 closure of the two arms.

    D1 receives (a1 - M a2)/sqrt2 and D2 receives (a1 + M a2)/sqrt2, where a_k
    is the arm-k part of the state and M the mirror z -> -z.
    """
    t = scenario.geometry.t_cross if t_close is None else t_close
    p2 = 0.0
    for w, st in scenario.pure_components():
        n1, n2, x = _mixing_terms(st, t)
        p2 += w * 0.5 * (n1 + n2 + 2 * x.real)
    p2 = float(p2)
    return 1.0 - p2, p2


def closure_state(state, geometry):
    """Post-closure state: D1 port in one outgoing lobe, D2 port in the other."""
    s_d1 = -1.0
    up_sign = s_d1 if geometry.upper_is_d1 else -s_d1
    out = []
    for b in state.branches:
        c = _sq(b.coefficient)
        if branch_arm(b) == 1:
            out.append(Branch(b.atom, b.factors, c))
            out.append(Branch(b.atom.mirrored(), b.factors, c))
        else:
            out.append(Branch(b.atom.mirrored(), b.factors, up_sign * c))
            out.append(Branch(b.atom, b.factors, -up_sign * c))
    return EntangledState(tuple(out), state.aux_labels)


def analytic_visibility(scenario, x=None, t=None, npts=1201):
    """Fringe contrast of the atom marginal along z over three central periods."""
    g = scenario.geometry
    t = g.t_cross if t is None else t
    x = g.speed * np.cos(g.theta) * (t - g.t_cross) if x is None else x
    per = g.fringe_period()
    z = np.linspace(-1.5 * per, 1.5 * per, npts)
    r = np.stack([np.full_like(z, x), z], axis=-1)
    P = scenario.marginal(r, t)
    return float((P.max() - P.min()) / (P.max() + P.min())), z, P


def build(kind, geometry=Geometry(), **kw):
    """Dispatch by kind name; keyword arguments go to the specific builder."""
    if kind == "no_device":
        return build_no_device(geometry)
    if kind == "cavity":
        return build_cavity(geometry, kw.get("box", BoxParams()))
    if kind == "overlap_device":
        return build_overlap_device(geometry, kw.get("alpha", 0.5), kw.get("sigma_b", 1.0))
    if kind == "detector_d3":
        return build_detector_d3(geometry, kw.get("d", 16.0), kw.get("sigma", 1.0))
    if kind == "bubble":
        return build_bubble(geometry, kw.get("distance", 20.0), kw.get("sigma", 1.0))
    if kind == "density_operator_mode":
        return build_density_operator_mode(geometry, kw.get("box", BoxParams()))
    raise InvalidParameterError(f"unknown scenario kind {kind!r}")
