"""Bohm trajectories: fixed-step RK4 in configuration space and Born sampling.

Random numbers come from numpy's PCG64 generator (``np.random.default_rng``),
so a seed reproduces the sample set on every platform numpy supports.
"""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from . import _kernels as K
from .errors import InvalidParameterError, NodeDegeneracyError, SamplerFailureError
from .fields import EPS_P, energy_split
from .wavepacket import box_envelope_overlap, branch_values, envelope_overlap, evaluate_entangled

TERMINATIONS = ("completed", "node-degenerate", "left-domain")
CHUNK = 1024
REFINE_TOL = 1e-7
MAX_LEVEL = 12


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray          # (n,)
    q: np.ndarray          # (n, D)
    v: np.ndarray          # (n, D) velocity at each recorded point
    termination: str
    dt: float
    crossings: int = 0     # z sign changes over every integrator step
    e_kin: np.ndarray = None   # (n, blocks)
    q_pot: np.ndarray = None   # (n, blocks)
    blocks: tuple = ("a",)

    @property
    def completed(self):
        return self.termination == "completed"

    def e_total(self):
        return self.e_kin.sum(axis=1) + self.q_pot.sum(axis=1)


@dataclass(frozen=True)
class EnsembleSpec:
    n: int
    seed: int = 0
    sampler: str = "auto"   # "branch" | "rejection" | "auto"

    def __post_init__(self):
        if self.n < 1:
            raise InvalidParameterError("ensemble size must be >= 1")
        if self.sampler not in ("auto", "branch", "rejection"):
            raise InvalidParameterError(f"unknown sampler {self.sampler!r}")


@dataclass(frozen=True)
class EnsembleResult:
    """Raw integrator output for many trajectories (padded with nan)."""
    t: np.ndarray          # (nrec,) record times
    q: np.ndarray          # (n, nrec, D)
    v: np.ndarray
    nrec: np.ndarray       # valid records per trajectory
    term: np.ndarray       # termination codes
    crossings: np.ndarray
    dt: float
    refined: np.ndarray = None   # grid steps that needed substeps

    @property
    def n(self):
        return self.q.shape[0]

    def completed(self):
        return self.term == K.TERM_COMPLETED

    def exclusion_rate(self):
        return float(np.mean(self.term != K.TERM_COMPLETED))

    def endpoints(self):
        """Final points of completed trajectories."""
        ok = self.completed()
        return self.q[ok, -1]


def default_dt(state):
    vmax = max(np.hypot(*b.atom.velocity) for b in state.branches)
    s0 = min(b.atom.sigma0 for b in state.branches)
    m = state.branches[0].atom.mass
    if vmax == 0:
        return s0 * s0 * m / 50.0
    return s0 * m / (50.0 * vmax)


def default_bounds(state, t_start, t_end, nsig=10.0):
    """Box enclosing every branch packet over [t_start, t_end] plus margins."""
    lo = np.full(state.ndim, np.inf)
    hi = np.full(state.ndim, -np.inf)
    for b in state.branches:
        p = b.atom
        w = p.width(t_end)
        for tt in (t_start, t_end):
            c = p.center(tt)
            lo[:2] = np.minimum(lo[:2], c - nsig * w)
            hi[:2] = np.maximum(hi[:2], c + nsig * w)
        for k, f in enumerate(b.factors):
            a, z = f.support()
            lo[2 + k] = min(lo[2 + k], a)
            hi[2 + k] = max(hi[2 + k], z)
    return lo, hi


def resolve_threads(threads=None):
    if threads is None:
        env = os.environ.get("BOHMFLOW_THREADS")
        threads = int(env) if env else 1
    return max(1, int(threads))


def integrate_points(state, q0, t_start, t_end, dt=None, record_every=1, bounds=None,
                     eps=EPS_P, threads=None, tol=None, max_level=MAX_LEVEL):
    """RK4 for many initial points; returns an EnsembleResult.

    The grid step is dt adjusted down so that an integer number of steps
    lands on t_end.  Grid steps whose local error indicator exceeds tol
    (default REFINE_TOL * sigma0) are redone with controlled substeps that
    end on the grid; tol=0 gives plain fixed-step RK4.  Work is split into fixed index chunks, so
    results do not depend on the thread count.
    """
    q0 = np.ascontiguousarray(np.atleast_2d(np.asarray(q0, dtype=float)))
    if q0.shape[1] != state.ndim:
        raise InvalidParameterError("initial points do not match the state layout")
    if dt is None:
        dt = default_dt(state)
    if not dt > 0:
        raise InvalidParameterError(f"dt must be > 0, got {dt}")
    if not t_end > t_start:
        raise InvalidParameterError("t_end must exceed t_start")
    if record_every < 1:
        raise InvalidParameterError("record_every must be >= 1")
    for b in state.branches:
        if t_start < b.atom.t0:
            raise InvalidParameterError("t_start precedes a packet birth time")
    nsteps = int(np.ceil((t_end - t_start) / dt - 1e-9))
    h = (t_end - t_start) / nsteps
    rec_steps = np.arange(0, nsteps + 1, record_every)
    if rec_steps[-1] != nsteps:
        rec_steps = np.append(rec_steps, nsteps)
    nrec = len(rec_steps)
    if bounds is None:
        bounds = default_bounds(state, t_start, t_end)
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    n, D = q0.shape
    out_q = np.full((n, nrec, D), np.nan)
    out_v = np.full((n, nrec, D), np.nan)
    out_nrec = np.zeros(n, dtype=np.int64)
    out_term = np.zeros(n, dtype=np.int64)
    out_cross = np.zeros(n, dtype=np.int64)
    out_sub = np.zeros(n, dtype=np.int64)
    if tol is None:
        tol = REFINE_TOL * min(b.atom.sigma0 for b in state.branches)
    coef, pk, fk, fp = state._packed
    masses = state.masses
    kd = K.dim_marker(D - 2)

    def work(i0):
        K.rk4_range(q0, kd, i0, min(i0 + CHUNK, n), float(t_start), h, nsteps, int(record_every),
                    lo, hi, float(eps), float(tol), int(max_level), coef, pk, fk, fp, masses,
                    out_q, out_v, out_nrec, out_term, out_cross, out_sub)

    starts = range(0, n, CHUNK)
    nt = resolve_threads(threads)
    if nt == 1 or n <= CHUNK:
        for i0 in starts:
            work(i0)
    else:
        with ThreadPoolExecutor(max_workers=nt) as ex:
            list(ex.map(work, starts))
    return EnsembleResult(t_start + rec_steps * h, out_q, out_v, out_nrec, out_term, out_cross, h,
                          out_sub)


def integrate_segments(state, q0, times, dt=None, record_every=1, bounds=None, **kw):
    """Integrate through a sequence of times, with a record at each one.

    Returns (result, marks) where marks[k] is the record index of times[k].
    Paths that terminate in a segment are not continued.
    """
    times = [float(t) for t in times]
    q0 = np.atleast_2d(np.asarray(q0, dtype=float))
    n, D = q0.shape
    if bounds is None:
        bounds = default_bounds(state, times[0], times[-1])
    parts, marks = [], [0]
    alive = np.ones(n, dtype=bool)
    cur = q0.copy()
    for ta, tb in zip(times[:-1], times[1:]):
        idx = np.flatnonzero(alive)
        r = integrate_points(state, cur[idx], ta, tb, dt, record_every, bounds, **kw)
        parts.append((idx, r))
        ok = r.completed()
        alive[idx[~ok]] = False
        cur[idx[ok]] = r.q[ok, -1]
        marks.append(marks[-1] + len(r.t) - 1)
    nrec = marks[-1] + 1
    t = np.concatenate([parts[0][1].t] + [r.t[1:] for _, r in parts[1:]])
    q = np.full((n, nrec, D), np.nan)
    v = np.full_like(q, np.nan)
    cnt = np.zeros(n, dtype=np.int64)
    term = np.zeros(n, dtype=np.int64)
    cross = np.zeros(n, dtype=np.int64)
    sub = np.zeros(n, dtype=np.int64)
    for k, (idx, r) in enumerate(parts):
        a = marks[k]
        m = len(r.t)
        q[idx, a:a + m] = r.q
        v[idx, a:a + m] = r.v
        cnt[idx] = a + r.nrec
        term[idx] = r.term
        cross[idx] += r.crossings
        sub[idx] += r.refined
    h = parts[0][1].dt
    return EnsembleResult(t, q, v, cnt, term, cross, h, sub), marks


def _audit_many(state, times, q):
    """Vectorized energy audit for points q (n, nrec, D) at shared times."""
    n, nrec, D = q.shape
    ek = np.full((n, nrec, len(state.blocks)), np.nan)
    qp = np.full_like(ek, np.nan)
    for r, tt in enumerate(times):
        pts = q[:, r]
        ok = np.all(np.isfinite(pts), axis=1)
        if not np.any(ok):
            continue
        es = energy_split(state, pts[ok], tt, nodes="nan")
        for k, blk in enumerate(state.blocks):
            ek[ok, r, k] = es.e_kin[blk]
            qp[ok, r, k] = es.q_pot[blk]
    return ek, qp


def to_trajectories(state, res, audit=True):
    ek = qp = None
    if audit:
        ek, qp = _audit_many(state, res.t, res.q)
    out = []
    for i in range(res.n):
        m = int(res.nrec[i])
        out.append(Trajectory(res.t[:m].copy(), res.q[i, :m].copy(), res.v[i, :m].copy(),
                              TERMINATIONS[int(res.term[i])], res.dt, int(res.crossings[i]),
                              None if ek is None else ek[i, :m].copy(),
                              None if qp is None else qp[i, :m].copy(),
                              state.blocks))
    return out


def integrate_trajectory(state, q0, t_start, t_end, dt=None, record_every=1, bounds=None, audit=True):
    """Single Bohm trajectory; termination is reported, not raised."""
    q0 = np.asarray(q0, dtype=float)
    P0 = float(abs(evaluate_entangled(state, q0, t_start)) ** 2)
    if not P0 >= EPS_P:
        raise NodeDegeneracyError(f"initial point has P = {P0:g}")
    res = integrate_points(state, q0[None], t_start, t_end, dt, record_every, bounds, threads=1)
    return to_trajectories(state, res, audit)[0]


def run_ensemble(state, spec_or_points, t_start, t_end, dt=None, record_every=1, bounds=None,
                 threads=None, audit=True):
    """Sample (or take) initial points and integrate each; ordered by sample index."""
    if isinstance(spec_or_points, EnsembleSpec):
        pts = sample_ensemble(state, spec_or_points, t_start)
    else:
        pts = np.asarray(spec_or_points, dtype=float)
    res = integrate_points(state, pts, t_start, t_end, dt, record_every, bounds, threads=threads)
    return to_trajectories(state, res, audit)


# ---------------------------------------------------------------- sampling

def branches_disjoint(state, t, tol=1e-10):
    """True when every pair of branches has negligible overlapping support."""
    br = state.branches
    for i in range(len(br)):
        for j in range(i + 1, len(br)):
            ov = envelope_overlap(br[i].atom, br[j].atom, t)
            for fi, fj in zip(br[i].factors, br[j].factors):
                ov = min(ov, box_envelope_overlap(fi, fj))
            if ov > tol:
                return False
    return True


def _sample_well(f, u):
    """Inverse CDF of sin^2 on [0, L]: table lookup refined by Newton steps."""
    L, n = f.L, f.n
    cdf = lambda x: x / L - np.sin(2 * n * np.pi * x / L) / (2 * n * np.pi)
    xs = np.linspace(0.0, L, 8193)
    x = np.interp(u, cdf(xs), xs)
    for _ in range(3):
        pdf = (2.0 / L) * np.sin(n * np.pi * x / L) ** 2
        step = np.where(pdf > 1e-8, (cdf(x) - u) / np.maximum(pdf, 1e-8), 0.0)
        x = np.clip(x - step, 0.0, L)
    return x


def sample_branch_product(state, n, rng, t):
    """Exact sampling for states whose branches have disjoint supports."""
    w = state.branch_weights()
    w = w / w.sum()
    which = rng.choice(len(w), size=n, p=w)
    q = np.empty((n, state.ndim))
    normals = rng.standard_normal((n, 2))
    for b, br in enumerate(state.branches):
        sel = which == b
        c = br.atom.center(t)
        q[sel, :2] = c + br.atom.width(t) * normals[sel]
    for k in range(len(state.aux_labels)):
        u = rng.random(n)
        for b, br in enumerate(state.branches):
            sel = which == b
            f = br.factors[k]
            if f.kind == "well":
                q[sel, 2 + k] = _sample_well(f, u[sel])
            else:
                q[sel, 2 + k] = f.gauss_center + f.sigma_b / np.sqrt(2.0) * ndtri(u[sel])
    return q, which


def sample_rejection(state, n, rng, t, batch=100_000, min_rate=1e-4):
    """Rejection sampling from the branch mixture sum_b |c_b psi_b|^2.

    By Cauchy-Schwarz |sum_b c_b psi_b|^2 <= B sum_b |c_b psi_b|^2, so a
    proposal q is accepted with probability P(q) / (B sum_b |c_b psi_b(q)|^2).
    The acceptance rate is the state norm over B times the summed branch
    weights; runs far below min_rate abort.
    """
    B = len(state.branches)
    out = []
    got = tried = 0
    while got < n:
        prop, _ = sample_branch_product(state, batch, rng, t)
        vals = branch_values(state, prop, t)
        env = B * np.sum(vals.real ** 2 + vals.imag ** 2, axis=0)
        psi = vals.sum(axis=0)
        P = psi.real ** 2 + psi.imag ** 2
        if np.any(P > env * (1 + 1e-12)):
            raise SamplerFailureError("density exceeds rejection envelope",
                                      {"envelope": float(env.min()), "max_seen": float(P.max())})
        acc = rng.random(batch) * env < P
        out.append(prop[acc])
        got += int(acc.sum())
        tried += batch
        if tried >= 10 * batch and got / tried < min_rate:
            raise SamplerFailureError("rejection efficiency too low",
                                      {"accepted": got, "proposed": tried})
    return np.concatenate(out)[:n]


def sample_ensemble(state, spec, t_start):
    """Initial points distributed as |Psi(., t_start)|^2."""
    rng = np.random.default_rng(spec.seed)
    mode = spec.sampler
    if mode == "auto":
        mode = "branch" if branches_disjoint(state, t_start) else "rejection"
    if mode == "branch":
        if not branches_disjoint(state, t_start):
            raise SamplerFailureError("branch-product sampling needs disjoint branches")
        return sample_branch_product(state, spec.n, rng, t_start)[0]
    return sample_rejection(state, spec.n, rng, t_start)


def fan_points(state, t, branch=0, n=11, span=2.0, aux=None):
    """Evenly spaced starts across a branch packet, transverse to its motion."""
    p = state.branches[branch].atom
    c = p.center(t)
    v = np.asarray(p.velocity, dtype=float)
    sp = np.hypot(*v)
    perp = np.array([0.0, 1.0]) if sp == 0 else np.array([-v[1], v[0]]) / sp
    u = np.linspace(-span, span, n) * p.width(t)
    q = np.zeros((n, state.ndim))
    q[:, :2] = c + u[:, None] * perp
    if state.ndim > 2:
        if aux is None:
            aux = []
            for f in state.branches[branch].factors:
                aux.append(f.L / (2 * f.n) if f.kind == "well" else f.gauss_center)
        q[:, 2:] = np.asarray(aux, dtype=float)
    return q
