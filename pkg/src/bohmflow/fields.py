"""Local fields of the guidance formalism: density, current, velocity,
quantum potential, energy split and continuity residual.

All functions take a configuration array ``q`` with the state's layout on the
last axis and broadcast over the leading axes.
"""
from dataclasses import dataclass

import numpy as np

from .errors import NodeDegeneracyError, UnsupportedLayoutError
from .wavepacket import (
    evaluate, evaluate_entangled, gradient, psi_and_grad,
)

EPS_P = 1e-12
EPS_R = 1e-9
H_REL = 1e-3


def density(state, q, t):
    psi = evaluate_entangled(state, q, t)
    return psi.real ** 2 + psi.imag ** 2


def amplitude(state, q, t):
    return np.abs(evaluate_entangled(state, q, t))


def _current_all(state, q, t):
    psi, g = psi_and_grad(state, q, t)
    j = (np.conj(psi)[..., None] * g).imag / state.masses
    return psi, j


def current(state, q, t, block="a"):
    sl = state.block_index(block)
    return _current_all(state, q, t)[1][..., sl]


def velocity(state, q, t, block=None, eps=EPS_P, nodes="raise"):
    """Guidance velocity Im(psi* grad psi)/(m |psi|^2) for one block or all.

    nodes="raise" signals NodeDegeneracyError when any P < eps;
    nodes="nan" marks those points with nan instead.
    """
    psi, j = _current_all(state, q, t)
    P = psi.real ** 2 + psi.imag ** 2
    bad = ~(P >= eps)
    if np.any(bad):
        if nodes == "raise":
            raise NodeDegeneracyError(f"density below {eps:g} at {int(np.sum(bad))} point(s)", bad)
        P = np.where(bad, np.nan, P)
    v = j / P[..., None]
    if block is None:
        return v
    return v[..., state.block_index(block)]


def _atom_cross_terms(state, r_a, t):
    """Branch packet values and gradients together with factor overlaps."""
    if len(state.aux_labels) > 1:
        raise UnsupportedLayoutError("reduced atom quantities need at most one auxiliary coordinate")
    r_a = np.asarray(r_a, dtype=float)
    vals = [b.coefficient * evaluate(b.atom, r_a, t) for b in state.branches]
    grads = [b.coefficient * gradient(b.atom, r_a, t) for b in state.branches]
    G = state.factor_overlaps(t)
    return vals, grads, G


def reduced_current_atom(state, r_a, t):
    """Atom current with the auxiliary coordinate integrated out.

    j_a = (1/m) Im sum_{b,b'} G[b,b'] psi_b^* grad psi_b', G the device overlaps.
    """
    vals, grads, G = _atom_cross_terms(state, r_a, t)
    acc = np.zeros(np.shape(r_a), dtype=complex)
    for i, vi in enumerate(vals):
        for k, gk in enumerate(grads):
            if G[i, k] != 0:
                acc += G[i, k] * np.conj(vi)[..., None] * gk
    return acc.imag / state.branches[0].atom.mass


def atom_marginal(state, r_a, t):
    """Atom density with auxiliary coordinates integrated out."""
    r_a = np.asarray(r_a, dtype=float)
    vals = [b.coefficient * evaluate(b.atom, r_a, t) for b in state.branches]
    G = state.factor_overlaps(t)
    acc = np.zeros(r_a.shape[:-1], dtype=complex)
    for i, vi in enumerate(vals):
        for k, vk in enumerate(vals):
            if G[i, k] != 0:
                acc += G[i, k] * np.conj(vi) * vk
    return acc.real


def _step_sizes(state, h):
    s0 = state.branches[0].atom.sigma0
    return H_REL * s0 if h is None else h


def quantum_potential(state, q, t, block=None, h=None, eps=EPS_R, nodes="raise"):
    """Q = -(1/2m) lap R / R by central differences of R = |psi|.

    block=None sums the per-block contributions.  Truncation error O(h^2).
    """
    q = np.asarray(q, dtype=float)
    h = _step_sizes(state, h)
    R0 = amplitude(state, q, t)
    bad = ~(R0 >= eps)
    if np.any(bad):
        if nodes == "raise":
            raise NodeDegeneracyError(f"amplitude below {eps:g} at {int(np.sum(bad))} point(s)", bad)
        R0 = np.where(bad, np.nan, R0)
    masses = state.masses
    blocks = state.blocks if block is None else (block,)
    out = np.zeros(q.shape[:-1])
    for blk in blocks:
        sl = state.block_index(blk)
        lap = np.zeros(q.shape[:-1])
        for d in range(sl.start, sl.stop):
            e = np.zeros(q.shape[-1])
            e[d] = h
            lap += (amplitude(state, q + e, t) - 2.0 * R0 + amplitude(state, q - e, t)) / (h * h)
        out += -lap / (2.0 * masses[sl.start] * R0)
    return out


@dataclass(frozen=True)
class EnergySplit:
    e_kin: dict
    q_pot: dict
    e_total: np.ndarray


def energy_split(state, q, t, h=None, nodes="raise"):
    """Kinetic and quantum-potential energy per block; V = 0 throughout."""
    v = velocity(state, q, t, nodes=nodes)
    m = state.masses
    ek, qp = {}, {}
    total = 0.0
    for blk in state.blocks:
        sl = state.block_index(blk)
        ek[blk] = 0.5 * m[sl.start] * np.sum(v[..., sl] ** 2, axis=-1)
        qp[blk] = quantum_potential(state, q, t, block=blk, h=h, nodes=nodes)
        total = total + ek[blk] + qp[blk]
    return EnergySplit(ek, qp, total)


def phase_time_derivative(state, q, t, h=1e-6):
    """-dS/dt by central difference of the phase (valid away from nodes)."""
    p1 = evaluate_entangled(state, q, t + h)
    p0 = evaluate_entangled(state, q, t - h)
    return -np.angle(p1 / p0) / (2 * h)


def continuity_residual(state, q, t, h=1e-3):
    """|dP/dt + sum over blocks of div j| by central differences."""
    q = np.asarray(q, dtype=float)
    dPdt = (density(state, q, t + h) - density(state, q, t - h)) / (2 * h)
    div = np.zeros(q.shape[:-1])
    for d in range(q.shape[-1]):
        e = np.zeros(q.shape[-1])
        e[d] = h
        jp = _current_all(state, q + e, t)[1][..., d]
        jm = _current_all(state, q - e, t)[1][..., d]
        div += (jp - jm) / (2 * h)
    return np.abs(dPdt + div)


@dataclass(frozen=True)
class FieldSample:
    P: np.ndarray
    j: np.ndarray
    v: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    E_kin: np.ndarray
    continuity_residual: np.ndarray


def sample_fields(state, q, t, h=None, resid_h=1e-3):
    """All local fields at q; degenerate points carry nan in v, Q, E_kin."""
    psi, j = _current_all(state, q, t)
    P = psi.real ** 2 + psi.imag ** 2
    ok = P >= EPS_P
    v = np.where(ok[..., None], j / np.where(ok, P, 1.0)[..., None], np.nan)
    Q = quantum_potential(state, q, t, h=h, nodes="nan")
    m = state.masses
    ek = 0.5 * np.sum(m * v * v, axis=-1)
    res = continuity_residual(state, q, t, h=resid_h)
    return FieldSample(P, j, v, np.sqrt(P), Q, ek, res)


def grid_rows(state, t, xs, zs, aux=(), resid_h=1e-3):
    """Row-major field grid over (x, z) at fixed aux coordinates.

    Returns (header, rows) with rows as float arrays; nan marks degenerate points.
    """
    X, Z = np.meshgrid(xs, zs, indexing="ij")
    cols = [X, Z] + [np.full_like(X, a) for a in aux]
    q = np.stack(cols, axis=-1).reshape(-1, state.ndim)
    fs = sample_fields(state, q, t, resid_h=resid_h)
    head = ["x", "z"] + [f"r_{l}" for l in state.aux_labels] + ["t", "P", "jx", "jz"]
    head += [f"j{l}" for l in state.aux_labels] + ["Q", "resid"]
    n = q.shape[0]
    data = [q[:, 0], q[:, 1]] + [q[:, 2 + k] for k in range(len(aux))]
    data += [np.full(n, t), fs.P, fs.j[:, 0], fs.j[:, 1]]
    data += [fs.j[:, 2 + k] for k in range(len(aux))]
    data += [fs.Q, fs.continuity_residual]
    return head, np.column_stack(data)
