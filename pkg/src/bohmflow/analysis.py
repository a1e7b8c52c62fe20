"""Reductions of states and trajectory ensembles to interferometer diagnostics."""
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import simpson

from .dynamics import EnsembleResult, Trajectory
from .errors import InsufficientStatisticsError, InvalidParameterError, RefinementError
from .fields import atom_marginal, reduced_current_atom
from .wavepacket import EntangledState

FLUX_TOL = 1e-6
MIN_TV_SAMPLES = 1000


def pure_components(obj):
    """[(weight, state)] for a Scenario, an EntangledState or such a list."""
    if isinstance(obj, EntangledState):
        return ((1.0, obj),)
    if hasattr(obj, "pure_components"):
        return tuple(obj.pure_components())
    return tuple(obj)


def packet_box(obj, t, nsig=6.0):
    """(x, z) box holding every branch packet at t to nsig widths."""
    lo = np.full(2, np.inf)
    hi = np.full(2, -np.inf)
    for _, st in pure_components(obj):
        for b in st.branches:
            c = b.atom.center(t)
            w = b.atom.width(t)
            lo = np.minimum(lo, c - nsig * w)
            hi = np.maximum(hi, c + nsig * w)
    return lo, hi


# ---------------------------------------------------------------- flux

def _flux_line(obj, t, x):
    r = np.stack([x, np.zeros_like(x)], axis=-1)
    jz = np.zeros_like(x)
    for w, st in pure_components(obj):
        jz += w * reduced_current_atom(st, r, t)[:, 1]
    return jz


def plane_flux(obj, t, x=None, n=801, tol=FLUX_TOL):
    """Net current through z = 0 at time t, aux coordinates integrated out.

    Composite Simpson over x; the error estimate compares with the same rule
    on every other node and must stay below tol.
    """
    if x is None:
        lo, hi = packet_box(obj, t, nsig=10.0)
        x = np.linspace(lo[0], hi[0], n | 1)
    x = np.asarray(x, dtype=float)
    if x.size < 5 or x.size % 2 == 0:
        raise InvalidParameterError("flux grid needs an odd number (>= 5) of nodes")
    jz = _flux_line(obj, t, x)
    fine = simpson(jz, x=x)
    coarse = simpson(jz[::2], x=x[::2])
    err = abs(fine - coarse) / 15.0
    edge = np.max(np.abs(jz[[0, -1]])) * (x[-1] - x[0])
    if err > tol or edge > tol:
        raise RefinementError(f"flux quadrature error estimate {max(err, edge):.3g} exceeds {tol:g}")
    return float(fine)


def component_fluxes(scenario, t, **kw):
    """Per-component plane flux of a mixture (a pure state gives one entry)."""
    return [plane_flux(st, t, **kw) for _, st in pure_components(scenario)]


def flux_series(obj, times, **kw):
    return np.array([plane_flux(obj, t, **kw) for t in times])


# ---------------------------------------------------------------- crossings, labels

@dataclass(frozen=True)
class CrossingStats:
    count: int        # sign changes of z summed over completed trajectories
    crossed: int      # completed trajectories with at least one change
    n: int            # completed trajectories
    excluded: int     # non-completed, left out


def _z_changes(z):
    s = np.sign(z)
    s = s[s != 0]
    return int(np.sum(s[1:] != s[:-1]))


def crossing_count(trajectories):
    """Crossings of z = 0.

    For integrator output the count covers every accepted step; for paths
    given as arrays it covers the stored points only.
    """
    if isinstance(trajectories, EnsembleResult):
        ok = trajectories.completed()
        c = trajectories.crossings[ok]
        return CrossingStats(int(c.sum()), int(np.sum(c > 0)), int(ok.sum()), int((~ok).sum()))
    count = crossed = n = excl = 0
    for tr in trajectories:
        if isinstance(tr, Trajectory):
            if not tr.completed:
                excl += 1
                continue
            k = max(tr.crossings, _z_changes(tr.q[:, 1]))
        else:
            k = _z_changes(np.asarray(tr)[:, 1])
        n += 1
        count += k
        crossed += k > 0
    return CrossingStats(count, crossed, n, excl)


def classify_detector(trajectory, geometry):
    """Detector label from the outgoing lobe the path ends in."""
    if isinstance(trajectory, Trajectory):
        if not trajectory.completed:
            raise InvalidParameterError("only completed trajectories can be classified")
        z = trajectory.q[-1, 1]
    else:
        z = np.asarray(trajectory)[-1, 1]
    return str(geometry.label(z))


def classify_points(z, geometry):
    return geometry.label(np.asarray(z))


def initial_arm(z0):
    """1 for the lower arm, 2 for the upper one."""
    return np.where(np.asarray(z0) < 0, 1, 2)


def empirical_detector_counts(labels, excluded=0):
    labels = np.asarray(labels)
    n1 = int(np.sum(labels == "D1"))
    n2 = int(np.sum(labels == "D2"))
    tot = n1 + n2 + int(excluded)
    return {"n": tot, "D1": n1 / tot, "D2": n2 / tot, "excluded": excluded / tot}


def binomial_sigma(p, n):
    return float(np.sqrt(max(p * (1 - p), 0.0) / n))


# ---------------------------------------------------------------- fringes

def fringe_visibility(z, P, period, center=0.0, periods=3):
    """(max - min)/(max + min) of a sampled density over the central periods."""
    z = np.asarray(z, dtype=float)
    P = np.asarray(P, dtype=float)
    sel = np.abs(z - center) <= 0.5 * periods * period
    if np.sum(sel) < 3:
        raise InsufficientStatisticsError("too few samples inside the fringe window")
    p = P[sel]
    hi, lo = p.max(), p.min()
    if hi + lo <= 0:
        raise InsufficientStatisticsError("density vanishes over the fringe window")
    return float((hi - lo) / (hi + lo))


def binned_visibility(z, period, center=0.0, periods=3, bins_per_period=8):
    """Max/min contrast of a histogram of samples; empty bins are an error."""
    half = 0.5 * periods * period
    edges = np.linspace(center - half, center + half, periods * bins_per_period + 1)
    h, _ = np.histogram(np.asarray(z), edges)
    if np.any(h == 0):
        raise InsufficientStatisticsError(f"{int(np.sum(h == 0))} empty bin(s) in the fringe window")
    return float((h.max() - h.min()) / (h.max() + h.min()))


@dataclass(frozen=True)
class FourierVisibility:
    value: float
    n: int
    noise_floor: float   # mean of the estimator for a fringe-free density


def fourier_visibility(z, period, center=0.0, periods=3):
    """Contrast from the first Fourier coefficient of samples in a window
    spanning a whole number of periods: V = 2 |<exp(2 pi i z / period)>|.
    """
    if int(periods) != periods or periods < 1:
        raise InvalidParameterError("periods must be a positive integer")
    z = np.asarray(z, dtype=float)
    sel = np.abs(z - center) < 0.5 * periods * period
    n = int(np.sum(sel))
    if n < 100:
        raise InsufficientStatisticsError(f"only {n} samples inside the fringe window")
    c = np.mean(np.exp(2j * np.pi * (z[sel] - center) / period))
    return FourierVisibility(float(2 * abs(c)), n, float(np.sqrt(np.pi / n)))


# ---------------------------------------------------------------- wobbles

def wobble_signature(trajectory, window, acc_floor=None):
    """Sign changes of dv_z/dt while x lies inside the window.

    dv_z/dt comes from central differences of the recorded velocities;
    magnitudes below acc_floor (default 1e-9 v^2/sigma with v the largest
    recorded speed) are treated as zero.
    """
    if isinstance(trajectory, Trajectory):
        t, q, v = trajectory.t, trajectory.q, trajectory.v
    else:
        t, q, v = trajectory
    t = np.asarray(t)
    if t.size < 3:
        return 0
    a = np.gradient(v[:, 1], t)
    if acc_floor is None:
        acc_floor = 1e-9 * float(np.max(np.sum(v[:, :2] ** 2, axis=1)))
    x = q[:, 0]
    sel = (x >= window[0]) & (x <= window[1]) & (np.abs(a) > acc_floor)
    s = np.sign(a[sel])
    return int(np.sum(s[1:] != s[:-1]))


# ---------------------------------------------------------------- equivariance

def _gl_nodes(edges, order):
    xg, wg = leggauss(order)
    a = edges[:-1, None]
    b = edges[1:, None]
    return (0.5 * (b - a) * xg + 0.5 * (a + b)).ravel(), (0.5 * (b - a) * wg).ravel()


def binned_marginal(obj, t, xe, ze, order=8):
    """Analytic atom-marginal mass in each (x, z) bin by Gauss-Legendre."""
    X, wx = _gl_nodes(np.asarray(xe, float), order)
    Z, wz = _gl_nodes(np.asarray(ze, float), order)
    XX, ZZ = np.meshgrid(X, Z, indexing="ij")
    r = np.stack([XX, ZZ], axis=-1)
    P = np.zeros(XX.shape)
    for w, st in pure_components(obj):
        P += w * atom_marginal(st, r, t)
    P *= np.outer(wx, wz)
    nx, nz = len(xe) - 1, len(ze) - 1
    return P.reshape(nx, order, nz, order).sum(axis=(1, 3))


@dataclass(frozen=True)
class TVResult:
    tv: float
    n: int
    bins: tuple
    box: tuple
    outside_empirical: float
    outside_analytic: float


def equivariance_distance(endpoints, obj, t, bins=40, box=None):
    """Total-variation distance between binned endpoints and the analytic
    atom marginal at t.  Mass outside the box counts as one extra bin.
    """
    pts = np.asarray(endpoints, dtype=float)[:, :2]
    n = len(pts)
    if n < MIN_TV_SAMPLES:
        raise InsufficientStatisticsError(f"{n} endpoints; need at least {MIN_TV_SAMPLES}")
    nb = (bins, bins) if np.isscalar(bins) else tuple(bins)
    lo, hi = packet_box(obj, t) if box is None else box
    xe = np.linspace(lo[0], hi[0], nb[0] + 1)
    ze = np.linspace(lo[1], hi[1], nb[1] + 1)
    H, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], [xe, ze])
    H /= n
    A = binned_marginal(obj, t, xe, ze)
    out_e = 1.0 - H.sum()
    out_a = max(0.0, 1.0 - A.sum())
    tv = 0.5 * (np.abs(H - A).sum() + abs(out_e - out_a))
    return TVResult(float(tv), n, nb, (tuple(lo), tuple(hi)), float(out_e), float(out_a))


# ---------------------------------------------------------------- energy

@dataclass(frozen=True)
class EnergyClass:
    label: str
    arm: int
    n: int
    reflected: bool
    pre_kin: dict
    pre_q: dict
    post_kin: dict
    post_q: dict
    max_rel_drift: float


def energy_audit_summary(trajectories, geometry, pre=0, post=-1):
    """Mean pre- and post-I energies per (detector label, initial arm).

    pre and post index the records taken as the region-I boundaries; the
    label comes from the final record.  A class is "reflected" when the
    outgoing lobe is on the side of the arm it started in.
    """
    groups = {}
    for tr in trajectories:
        if not tr.completed or tr.e_kin is None:
            continue
        key = (classify_detector(tr, geometry), int(initial_arm(tr.q[0, 1])))
        groups.setdefault(key, []).append(tr)
    out = []
    for (lab, arm), trs in sorted(groups.items()):
        blocks = trs[0].blocks
        ek0 = np.array([tr.e_kin[pre] for tr in trs])
        ek1 = np.array([tr.e_kin[post] for tr in trs])
        q0 = np.array([tr.q_pot[pre] for tr in trs])
        q1 = np.array([tr.q_pot[post] for tr in trs])
        e0 = ek0.sum(1) + q0.sum(1)
        e1 = ek1.sum(1) + q1.sum(1)
        drift = float(np.max(np.abs(e1 - e0) / np.abs(e0)))
        end_up = bool(trs[0].q[-1, 1] > 0)
        out.append(EnergyClass(
            lab, arm, len(trs), end_up == (arm == 2),
            dict(zip(blocks, ek0.mean(0))), dict(zip(blocks, q0.mean(0))),
            dict(zip(blocks, ek1.mean(0))), dict(zip(blocks, q1.mean(0))), drift))
    return out


def energy_drift(trajectories, pre=0, post=-1):
    """|E_total(post) - E_total(pre)| / |E_total(pre)| per completed trajectory."""
    d = []
    for tr in trajectories:
        if tr.completed and tr.e_kin is not None:
            e = tr.e_total()
            d.append(abs(e[post] - e[pre]) / abs(e[pre]))
    return np.array(d)


# ---------------------------------------------------------------- report

@dataclass
class RunReport:
    scenario: str
    seed: int
    n: int
    p_analytic: tuple
    p_empirical: dict = None
    p_ci: tuple = None
    flux_times: np.ndarray = None
    flux: np.ndarray = None
    crossings: CrossingStats = None
    visibility: dict = field(default_factory=dict)
    tv: float = None
    exclusion_rate: float = 0.0
    energy: list = field(default_factory=list)
    status: str = "ok"

    def summary(self):
        """Flat dict of plain values for printing and TOML output."""
        d = {"scenario": self.scenario, "seed": int(self.seed), "n": int(self.n),
             "status": self.status,
             "P_D1_analytic": float(self.p_analytic[0]), "P_D2_analytic": float(self.p_analytic[1]),
             "exclusion_rate": float(self.exclusion_rate)}
        if self.p_empirical is not None:
            d["P_D1_empirical"] = float(self.p_empirical["D1"])
            d["P_D2_empirical"] = float(self.p_empirical["D2"])
            d["excluded_fraction"] = float(self.p_empirical["excluded"])
            d["P_D1_ci95"] = [float(v) for v in self.p_ci]
        if self.crossings is not None:
            d["crossing_count"] = self.crossings.count
            d["crossed_trajectories"] = self.crossings.crossed
        for k, v in self.visibility.items():
            d[f"visibility_{k}"] = float(v)
        if self.tv is not None:
            d["tv_distance"] = float(self.tv)
        if self.flux is not None and len(self.flux):
            d["plane_flux_max_abs"] = float(np.max(np.abs(self.flux)))
        return d

    def energy_rows(self):
        rows = []
        for c in self.energy:
            for blk in c.pre_kin:
                rows.append((c.label, c.arm, c.n, int(c.reflected), blk,
                             c.pre_kin[blk], c.pre_q[blk], c.post_kin[blk], c.post_q[blk],
                             c.max_rel_drift))
        return rows
