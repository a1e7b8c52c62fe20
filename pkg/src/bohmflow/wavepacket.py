"""Closed-form wavefunctions: free 2D Gaussian packets, 1D device factors and
multi-branch entangled products over configuration space.

Units: hbar = 1.  Configuration points are arrays whose last axis is the
coordinate layout ``(x, z, aux_0, aux_1, ...)``.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, OutOfDomainError

SQRT2PI = np.sqrt(2.0 * np.pi)
NORM_TOL = 1e-9

# packed factor kinds shared with the compiled kernels
KIND_WELL = 0
KIND_GAUSS = 1


def _vec2(v, name):
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (2,) or not np.all(np.isfinite(a)):
        raise InvalidParameterError(f"{name} must be a finite 2-vector, got {v!r}")
    return (float(a[0]), float(a[1]))


@dataclass(frozen=True)
class GaussianPacket:
    center0: tuple
    velocity: tuple
    sigma0: float = 1.0
    amplitude: complex = 1.0
    t0: float = 0.0
    mass: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center0", _vec2(self.center0, "center0"))
        object.__setattr__(self, "velocity", _vec2(self.velocity, "velocity"))
        if not (self.sigma0 > 0) or not np.isfinite(self.sigma0):
            raise InvalidParameterError(f"sigma0 must be > 0, got {self.sigma0}")
        if not (self.mass > 0) or not np.isfinite(self.mass):
            raise InvalidParameterError(f"mass must be > 0, got {self.mass}")
        object.__setattr__(self, "sigma0", float(self.sigma0))
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "amplitude", complex(self.amplitude))

    def center(self, t):
        s = t - self.t0
        return np.array([self.center0[0] + self.velocity[0] * s,
                         self.center0[1] + self.velocity[1] * s])

    def width(self, t):
        """Std of |psi|^2 along each axis."""
        tau = (t - self.t0) / (2.0 * self.mass * self.sigma0 ** 2)
        return self.sigma0 * np.sqrt(1.0 + tau * tau)

    def mirrored(self):
        """Reflection z -> -z."""
        return GaussianPacket((self.center0[0], -self.center0[1]),
                              (self.velocity[0], -self.velocity[1]),
                              self.sigma0, self.amplitude, self.t0, self.mass)

    def scaled(self, c):
        return GaussianPacket(self.center0, self.velocity, self.sigma0,
                              self.amplitude * c, self.t0, self.mass)


def make_gaussian(center0, velocity, sigma0=1.0, t0=0.0, mass=1.0, amplitude=1.0):
    return GaussianPacket(center0, velocity, sigma0, amplitude, t0, mass)


def _check_time(p, t):
    if t < p.t0:
        raise OutOfDomainError(f"t={t} precedes packet birth time t0={p.t0}")


def _packet_parts(p, r, t):
    """Value and log-gradient g (grad psi = g * psi)."""
    _check_time(p, t)
    r = np.asarray(r, dtype=float)
    s = t - p.t0
    m, s0 = p.mass, p.sigma0
    a = 1.0 + 1j * (s / (2.0 * m * s0 * s0))
    inv = 1.0 / (4.0 * s0 * s0 * a)
    cx = p.center0[0] + p.velocity[0] * s
    cz = p.center0[1] + p.velocity[1] * s
    kx, kz = m * p.velocity[0], m * p.velocity[1]
    dx = r[..., 0] - cx
    dz = r[..., 1] - cz
    ex = (-(dx * dx + dz * dz) * inv
          + 1j * (kx * (r[..., 0] - p.center0[0]) + kz * (r[..., 1] - p.center0[1])
                  - (kx * kx + kz * kz) * s / (2.0 * m)))
    psi = p.amplitude * np.exp(ex) / (SQRT2PI * s0 * a)
    g = np.stack([-2.0 * dx * inv + 1j * kx, -2.0 * dz * inv + 1j * kz], axis=-1)
    return psi, g, inv


def evaluate(packet, r, t):
    return _packet_parts(packet, r, t)[0]


def gradient(packet, r, t):
    psi, g, _ = _packet_parts(packet, r, t)
    return g * psi[..., None]


def laplacian(packet, r, t):
    psi, g, inv = _packet_parts(packet, r, t)
    return psi * (g[..., 0] ** 2 + g[..., 1] ** 2 - 4.0 * inv)


def _exponent_coeffs(p, t):
    """psi = N exp(-A|r|^2 + B.r + C)."""
    _check_time(p, t)
    s = t - p.t0
    m, s0 = p.mass, p.sigma0
    a = 1.0 + 1j * (s / (2.0 * m * s0 * s0))
    A = 1.0 / (4.0 * s0 * s0 * a)
    c = p.center(t)
    k = m * np.asarray(p.velocity)
    B = 2.0 * A * c + 1j * k
    C = -A * (c @ c) - 1j * (k @ np.asarray(p.center0)) - 1j * (k @ k) * s / (2.0 * m)
    N = p.amplitude / (SQRT2PI * s0 * a)
    return N, A, B, C


def packet_overlap(p, q, t):
    """<p|q> at time t, closed form."""
    Np, Ap, Bp, Cp = _exponent_coeffs(p, t)
    Nq, Aq, Bq, Cq = _exponent_coeffs(q, t)
    al = np.conj(Ap) + Aq
    be = np.conj(Bp) + Bq
    ga = np.conj(Cp) + Cq
    return complex(np.conj(Np) * Nq * (np.pi / al) * np.exp((be @ be) / (4.0 * al) + ga))


def envelope_overlap(p, q, t):
    """Integral of |p||q|; measures spatial overlap ignoring phases."""
    sp, sq = p.width(t), q.width(t)
    d = p.center(t) - q.center(t)
    pref = 2.0 * sp * sq / (sp * sp + sq * sq)
    return abs(p.amplitude) * abs(q.amplitude) * pref * float(np.exp(-(d @ d) / (4.0 * (sp * sp + sq * sq))))


# ---------------------------------------------------------------- devices

@dataclass(frozen=True)
class BoxState:
    """1D device factor.

    kind "well": infinite square well eigenstate n on [0, L].
    kind "gaussian": displaced ground state of width sigma_b about ``origin``,
    displacement beta in the usual coherent-state sense, times exp(i*phase).
    """
    kind: str = "well"
    n: int = 1
    L: float = np.pi
    mass_b: float = 1.0
    include_dynamic_phase: bool = False
    displacement: complex = 0j
    sigma_b: float = 1.0
    origin: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("well", "gaussian"):
            raise InvalidParameterError(f"unknown device kind {self.kind!r}")
        if not self.mass_b > 0:
            raise InvalidParameterError("mass_b must be > 0")
        if self.kind == "well":
            if int(self.n) != self.n or self.n < 1:
                raise InvalidParameterError(f"well level must be a positive integer, got {self.n}")
            if not self.L > 0:
                raise InvalidParameterError("L must be > 0")
            object.__setattr__(self, "n", int(self.n))
        else:
            if not self.sigma_b > 0:
                raise InvalidParameterError("sigma_b must be > 0")
            if self.include_dynamic_phase:
                raise InvalidParameterError("dynamic phase is only defined for well eigenstates")
        object.__setattr__(self, "displacement", complex(self.displacement))

    @property
    def energy(self):
        if self.kind != "well":
            raise InvalidParameterError("energy only defined for well eigenstates")
        return (self.n * np.pi / self.L) ** 2 / (2.0 * self.mass_b)

    # gaussian parameters: eta = N exp(-(x-c)^2/(2 s^2) + i(p x + phi))
    @property
    def gauss_center(self):
        return self.origin + np.sqrt(2.0) * self.sigma_b * self.displacement.real

    @property
    def gauss_momentum(self):
        return np.sqrt(2.0) * self.displacement.imag / self.sigma_b

    @property
    def gauss_phase(self):
        b = self.displacement
        return self.phase - b.real * b.imag - self.gauss_momentum * self.origin

    def support(self, nsig=12.0):
        if self.kind == "well":
            return 0.0, self.L
        c = self.gauss_center
        return c - nsig * self.sigma_b, c + nsig * self.sigma_b


def box_well(n, L=np.pi, mass_b=1.0, include_dynamic_phase=False):
    return BoxState("well", n=n, L=L, mass_b=mass_b, include_dynamic_phase=include_dynamic_phase)


def displaced_gaussian(beta, sigma_b=1.0, origin=0.0, phase=0.0, mass_b=1.0):
    return BoxState("gaussian", displacement=beta, sigma_b=sigma_b, origin=origin,
                    phase=phase, mass_b=mass_b)


def pointer_state(center, sigma=1.0, mass_b=1.0):
    return displaced_gaussian(0.0, sigma_b=sigma, origin=center, mass_b=mass_b)


def _box_parts(st, x, t):
    x = np.asarray(x, dtype=float)
    if st.kind == "well":
        kk = st.n * np.pi / st.L
        A = np.sqrt(2.0 / st.L)
        inside = (x > 0.0) & (x < st.L)
        f = np.where(inside, A * np.sin(kk * x), 0.0)
        df = np.where(inside, A * kk * np.cos(kk * x), 0.0)
        ph = st.phase
        if st.include_dynamic_phase:
            ph = ph - st.energy * t
        if ph != 0.0:
            e = np.exp(1j * ph)
            return f * e, df * e
        return f, df
    s = st.sigma_b
    u = x - st.gauss_center
    p = st.gauss_momentum
    f = (np.pi * s * s) ** -0.25 * np.exp(-u * u / (2 * s * s) + 1j * (p * x + st.gauss_phase))
    return f, f * (-u / (s * s) + 1j * p)


def evaluate_box(state, x, t=0.0):
    return _box_parts(state, x, t)[0]


def box_derivative(state, x, t=0.0):
    return _box_parts(state, x, t)[1]


def _gl_overlap(a, b, t, lo, hi, npts=600):
    xg, wg = np.polynomial.legendre.leggauss(npts)
    x = 0.5 * (hi - lo) * xg + 0.5 * (hi + lo)
    w = 0.5 * (hi - lo) * wg
    return complex(np.sum(w * np.conj(evaluate_box(a, x, t)) * evaluate_box(b, x, t)))


def box_overlap(a, b, t=0.0):
    """<a|b> for two device factors at time t."""
    if a.kind == "well" and b.kind == "well" and a.L == b.L:
        if a.n != b.n:
            return 0j
        ph = b.phase - a.phase
        if a.include_dynamic_phase:
            ph += a.energy * t
        if b.include_dynamic_phase:
            ph -= b.energy * t
        return complex(np.exp(1j * ph)) if ph != 0.0 else 1 + 0j
    if a.kind == "gaussian" and b.kind == "gaussian":
        sa, sb = a.sigma_b, b.sigma_b
        ca, cb = a.gauss_center, b.gauss_center
        A = 1 / (2 * sa * sa) + 1 / (2 * sb * sb)
        B = ca / (sa * sa) + cb / (sb * sb) + 1j * (b.gauss_momentum - a.gauss_momentum)
        C = -ca * ca / (2 * sa * sa) - cb * cb / (2 * sb * sb) + 1j * (b.gauss_phase - a.gauss_phase)
        N = (np.pi * sa * sa) ** -0.25 * (np.pi * sb * sb) ** -0.25
        return complex(N * np.sqrt(np.pi / A) * np.exp(B * B / (4 * A) + C))
    lo = max(a.support()[0], b.support()[0])
    hi = min(a.support()[1], b.support()[1])
    if hi <= lo:
        return 0j
    return _gl_overlap(a, b, t, lo, hi)


def box_envelope_overlap(a, b):
    """Integral of |a||b|; 0 when supports are (numerically) disjoint."""
    if a.kind == "gaussian" and b.kind == "gaussian":
        sa, sb = a.sigma_b, b.sigma_b
        d = a.gauss_center - b.gauss_center
        return float(np.sqrt(2 * sa * sb / (sa * sa + sb * sb)) * np.exp(-d * d / (2 * (sa * sa + sb * sb))))
    lo = max(a.support()[0], b.support()[0])
    hi = min(a.support()[1], b.support()[1])
    if hi <= lo:
        return 0.0
    xg, wg = np.polynomial.legendre.leggauss(600)
    x = 0.5 * (hi - lo) * xg + 0.5 * (hi + lo)
    return float(np.sum(0.5 * (hi - lo) * wg * np.abs(evaluate_box(a, x)) * np.abs(evaluate_box(b, x))))


# ---------------------------------------------------------------- entangled

@dataclass(frozen=True)
class Branch:
    atom: GaussianPacket
    factors: tuple = ()
    coefficient: complex = 1.0

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        object.__setattr__(self, "coefficient", complex(self.coefficient))


@dataclass(frozen=True)
class EntangledState:
    branches: tuple
    aux_labels: tuple = ()
    check_norm: bool = field(default=True, compare=False)

    def __post_init__(self):
        br = tuple(self.branches)
        if not br:
            raise InvalidParameterError("state needs at least one branch")
        object.__setattr__(self, "branches", br)
        K = len(br[0].factors)
        labels = tuple(self.aux_labels) if self.aux_labels else tuple(f"aux{k}" for k in range(K))
        if len(labels) != K:
            raise InvalidParameterError("aux_labels must name every auxiliary coordinate")
        if len(set(labels)) != K or "a" in labels:
            raise InvalidParameterError(f"bad aux labels {labels}")
        object.__setattr__(self, "aux_labels", labels)
        for b in br:
            if len(b.factors) != K:
                raise InvalidParameterError("branches disagree on the auxiliary layout")
            if b.atom.mass != br[0].atom.mass:
                raise InvalidParameterError("atom mass differs between branches")
        for k in range(K):
            ms = {b.factors[k].mass_b for b in br}
            if len(ms) != 1:
                raise InvalidParameterError(f"device mass differs between branches on {labels[k]}")
        object.__setattr__(self, "_packed", _pack(self))
        if self.check_norm:
            nrm = self.norm(self.t_ref)
            if abs(nrm - 1.0) > NORM_TOL:
                raise InvalidParameterError(f"state not normalized: norm = {nrm!r}")

    @property
    def ndim(self):
        return 2 + len(self.aux_labels)

    @property
    def t_ref(self):
        return max(b.atom.t0 for b in self.branches)

    @property
    def masses(self):
        m = self.branches[0].atom.mass
        return np.array([m, m] + [f.mass_b for f in self.branches[0].factors])

    def block_index(self, block):
        """Coordinate slice for 'a' (atom) or an aux label / aux index."""
        if block in ("a", "atom"):
            return slice(0, 2)
        if isinstance(block, (int, np.integer)):
            k = int(block)
        elif block in self.aux_labels:
            k = self.aux_labels.index(block)
        else:
            raise InvalidParameterError(f"unknown block {block!r}")
        if not 0 <= k < len(self.aux_labels):
            raise InvalidParameterError(f"unknown block {block!r}")
        return slice(2 + k, 3 + k)

    @property
    def blocks(self):
        return ("a",) + self.aux_labels

    def factor_overlaps(self, t):
        """G[b, b'] = prod_k <f_bk | f_b'k>."""
        B = len(self.branches)
        G = np.ones((B, B), dtype=complex)
        for i, bi in enumerate(self.branches):
            for j, bj in enumerate(self.branches):
                for fi, fj in zip(bi.factors, bj.factors):
                    G[i, j] *= box_overlap(fi, fj, t)
        return G

    def norm(self, t):
        tot = 0j
        G = self.factor_overlaps(t)
        for i, bi in enumerate(self.branches):
            for j, bj in enumerate(self.branches):
                if G[i, j] == 0:
                    continue
                tot += (np.conj(bi.coefficient) * bj.coefficient
                        * packet_overlap(bi.atom, bj.atom, t) * G[i, j])
        return float(tot.real)

    def branch_weights(self):
        return np.array([abs(b.coefficient * b.atom.amplitude) ** 2 for b in self.branches])


def normalized(branches, aux_labels=(), t=None):
    """Rescale branch coefficients so the state has unit norm."""
    raw = EntangledState(tuple(branches), aux_labels, check_norm=False)
    nrm = raw.norm(raw.t_ref if t is None else t)
    if abs(nrm - 1.0) < 1e-14:
        return EntangledState(raw.branches, raw.aux_labels)
    c = 1.0 / np.sqrt(nrm)
    return EntangledState(tuple(Branch(b.atom, b.factors, b.coefficient * c) for b in raw.branches),
                          raw.aux_labels)


def _pack(state):
    B = len(state.branches)
    K = len(state.aux_labels)
    coef = np.empty(B, dtype=complex)
    pk = np.empty((B, 7))
    fk = np.zeros((B, max(K, 1)), dtype=np.int64)
    fp = np.zeros((B, max(K, 1), 5))
    for b, br in enumerate(state.branches):
        p = br.atom
        coef[b] = br.coefficient * p.amplitude
        pk[b] = (p.center0[0], p.center0[1], p.velocity[0], p.velocity[1], p.sigma0, p.t0, p.mass)
        for k, f in enumerate(br.factors):
            if f.kind == "well":
                fk[b, k] = KIND_WELL
                fp[b, k] = (f.n, f.L, f.energy, 1.0 if f.include_dynamic_phase else 0.0, f.phase)
            else:
                fk[b, k] = KIND_GAUSS
                fp[b, k] = (f.gauss_center, f.sigma_b, f.gauss_momentum, f.gauss_phase, 0.0)
    for a in (coef, pk, fk, fp):
        a.setflags(write=False)
    return coef, pk, fk, fp


def _check_layout(state, q):
    q = np.asarray(q, dtype=float)
    if q.ndim == 0 or q.shape[-1] != state.ndim:
        raise InvalidParameterError(
            f"configuration point has {q.shape[-1] if q.ndim else 0} coordinates, state expects {state.ndim}")
    return q


def psi_and_grad(state, q, t):
    """Psi and its full configuration-space gradient (reference numpy path)."""
    q = _check_layout(state, q)
    K = len(state.aux_labels)
    psi = np.zeros(q.shape[:-1], dtype=complex)
    grad = np.zeros(q.shape, dtype=complex)
    for br in state.branches:
        pv, g, _ = _packet_parts(br.atom, q[..., :2], t)
        pv = br.coefficient * pv
        fv, fd = [], []
        for k, f in enumerate(br.factors):
            a, b = _box_parts(f, q[..., 2 + k], t)
            fv.append(a)
            fd.append(b)
        prod = pv
        for a in fv:
            prod = prod * a
        psi += prod
        grad[..., :2] += g * prod[..., None]
        for k in range(K):
            other = pv
            for j in range(K):
                other = other * (fd[j] if j == k else fv[j])
            grad[..., 2 + k] += other
    return psi, grad


def evaluate_entangled(state, q, t):
    q = _check_layout(state, q)
    psi = np.zeros(q.shape[:-1], dtype=complex)
    for br in state.branches:
        v = br.coefficient * evaluate(br.atom, q[..., :2], t)
        for k, f in enumerate(br.factors):
            v = v * evaluate_box(f, q[..., 2 + k], t)
        psi += v
    return psi


def grad_block(state, q, t, block):
    sl = state.block_index(block)
    return psi_and_grad(state, q, t)[1][..., sl]


def branch_values(state, q, t):
    """Per-branch amplitudes, shape (B, ...)."""
    q = _check_layout(state, q)
    out = []
    for br in state.branches:
        v = br.coefficient * evaluate(br.atom, q[..., :2], t)
        for k, f in enumerate(br.factors):
            v = v * evaluate_box(f, q[..., 2 + k], t)
        out.append(v)
    return np.array(out)
