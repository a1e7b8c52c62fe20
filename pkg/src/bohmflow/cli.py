"""Command line front end: run, fields, sweep, version."""
import argparse
import os
import sys
import time
from dataclasses import replace

import numpy as np
import tomli_w

from . import __version__
from .analysis import (
    CrossingStats, RunReport, binomial_sigma, classify_points, crossing_count, empirical_detector_counts,
    energy_audit_summary, equivariance_distance, flux_series, initial_arm, plane_flux,
    pure_components,
)
from .config import SCHEMA, SWEEPABLE, load
from .dynamics import (
    EnsembleSpec, TERMINATIONS, default_dt, integrate_segments, sample_ensemble, sample_rejection,
    _audit_many, to_trajectories,
)
from .errors import ConfigError, SamplerFailureError
from .fields import grid_rows
from .scenarios import analytic_visibility, closure_state, detector_probabilities
from .svg import Figure

EXIT_OK, EXIT_CONFIG, EXIT_DEGENERATE, EXIT_IO = 0, 2, 3, 4
EXCLUSION_BUDGET = 1e-3


def fmt(x):
    if isinstance(x, (str, np.str_)):
        return str(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


def write_csv(path, header, rows):
    with open(path, "w", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for r in rows:
            f.write(",".join(fmt(v) for v in r) + "\n")


def component_seed(seed, k):
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def split_counts(weights, n):
    c = [int(np.floor(w * n)) for w in weights]
    c[-1] += n - sum(c)
    return c


def aux_slice(state, value):
    if not state.aux_labels:
        return ()
    out = []
    for f in state.branches[0].factors:
        if value >= 0:
            out.append(value)
        elif f.kind == "well":
            out.append(f.L / 4)
        else:
            out.append(f.gauss_center)
    return tuple(out)


def _prefix(cfg):
    return os.path.join(cfg["output.dir"], f"{cfg['scenario.kind']}_s{cfg['ensemble.seed']}")


# ---------------------------------------------------------------- run

def closure_sample(scenario, n, seed, t):
    """Born sample of the closed-interferometer state; returns detector labels."""
    g = scenario.geometry
    comps = pure_components(scenario)
    labels = []
    for k, ((w, st), nk) in enumerate(zip(comps, split_counts([w for w, _ in comps], n))):
        if nk == 0:
            continue
        rng = np.random.default_rng(component_seed(seed, 1000 + k))
        pts = sample_rejection(closure_state(st, g), nk, rng, t)
        labels.append(classify_points(pts[:, 1], g))
    return np.concatenate(labels)


def simulate(cfg, threads=None):
    """Sample, integrate and reduce one configured scenario."""
    sc = cfg.scenario()
    g = sc.geometry
    t0 = g.t_launch
    t1 = cfg["integrator.t_end"] or g.t_end
    seed = cfg["ensemble.seed"]
    n = cfg["ensemble.n"]
    comps = pure_components(sc)
    counts = split_counts([w for w, _ in comps], n)
    # records land on the region-I boundaries for the energy audit
    ta, tb = g.i_window_times()
    stops = [t0] + [t for t in (ta, tb) if t0 < t < t1] + [t1]
    runs = []
    for k, ((w, st), nk) in enumerate(zip(comps, counts)):
        if nk == 0:
            continue
        spec = EnsembleSpec(nk, component_seed(seed, k), cfg["ensemble.sampler"])
        q0 = sample_ensemble(st, spec, t0)
        dt = cfg["integrator.dt"] or default_dt(st)
        res, marks = integrate_segments(st, q0, stops, dt, cfg["integrator.record_every"],
                                        threads=threads, tol=cfg["integrator.refine_tol"])
        runs.append((k, st, res, marks))
    return sc, runs, (t0, t1)


def audit_records(res, marks):
    """Records at the region-I boundaries plus the final one."""
    keep = [marks[1], marks[2], marks[-1]] if len(marks) == 4 else [marks[0], marks[-1], marks[-1]]
    ok = res.completed()
    return replace(res, t=res.t[keep], q=res.q[:, keep], v=res.v[:, keep],
                   nrec=np.where(ok, len(keep), 0))


def build_report(cfg, sc, runs, t1):
    g = sc.geometry
    seed, n = cfg["ensemble.seed"], cfg["ensemble.n"]
    rep = RunReport(sc.kind, seed, n, detector_probabilities(sc), status=sc.status)
    labels = closure_sample(sc, n, seed, t1)
    rep.p_empirical = empirical_detector_counts(labels)
    s = binomial_sigma(rep.p_empirical["D1"], len(labels))
    rep.p_ci = (rep.p_empirical["D1"] - 1.96 * s, rep.p_empirical["D1"] + 1.96 * s)
    ta, tb = g.i_window_times()
    rep.flux_times = np.linspace(ta, tb, 21)
    rep.flux = flux_series(sc, rep.flux_times)
    cs = [crossing_count(res) for _, _, res, _ in runs]
    rep.crossings = CrossingStats(*(sum(getattr(c, f) for c in cs) for f in ("count", "crossed", "n", "excluded")))
    rep.visibility["analytic_t_cross"] = analytic_visibility(sc)[0]
    ends = np.concatenate([res.endpoints()[:, :2] for _, _, res, _ in runs])
    total = sum(res.n for _, _, res, _ in runs)
    rep.exclusion_rate = 1.0 - len(ends) / total
    if len(ends) >= 1000:
        rep.tv = equivariance_distance(ends, sc, t1).tv
    trs = []
    for _, st, res, marks in runs:
        sub = audit_records(res, marks)
        trs += [tr for tr in to_trajectories(st, sub, audit=True) if tr.completed]
    rep.energy = energy_audit_summary(trs, g, pre=0, post=-2)
    return rep, trs


def write_run(cfg, sc, runs, rep, trajs):
    pre = _prefix(cfg)
    g = sc.geometry
    aux = sc.aux_labels
    # endpoints for every trajectory
    head = ["id", "component", "arm", "label", "termination", "crossings", "x0", "z0"]
    head += [f"r_{a}0" for a in aux] + ["x", "z"] + [f"r_{a}" for a in aux]
    rows = []
    i = 0
    for k, st, res, _ in runs:
        for j in range(res.n):
            m = int(res.nrec[j]) - 1
            q0 = res.q[j, 0]
            q1 = res.q[j, m]
            lab = str(g.label(q1[1])) if res.term[j] == 0 else "none"
            rows.append([i, k, int(initial_arm(q0[1])), lab, TERMINATIONS[int(res.term[j])],
                         int(res.crossings[j])] + list(q0) + list(q1))
            i += 1
    write_csv(pre + "_endpoints.csv", head, rows)
    # every recorded step of every trajectory
    head = ["traj_id", "t", "x", "z"] + [f"r_{a}" for a in aux] + ["vx", "vz", "Ekin", "Q", "term"]
    rows = []
    kept = []
    i = 0
    for k, st, res, _ in runs:
        ek, qp = _audit_many(st, res.t, res.q)
        ek, qp = ek.sum(-1), qp.sum(-1)
        for j in range(res.n):
            m = int(res.nrec[j])
            term = TERMINATIONS[int(res.term[j])]
            for r in range(m):
                rows.append([i, res.t[r], *res.q[j, r], res.v[j, r, 0], res.v[j, r, 1], ek[j, r], qp[j, r],
                             term])
            if len(kept) < cfg["output.max_paths"]:
                kept.append(res.q[j, :m, :2])
            i += 1
    write_csv(pre + "_trajectories.csv", head, rows)
    write_csv(pre + "_flux.csv", ["t", "plane_flux"], zip(rep.flux_times, rep.flux))
    write_csv(pre + "_energy.csv",
              ["label", "arm", "n", "reflected", "block", "pre_kin", "pre_q", "post_kin", "post_q",
               "max_rel_drift"], rep.energy_rows())
    doc = {"config": cfg.nested(), "report": rep.summary()}
    doc["report"]["energy"] = [
        {"label": c.label, "arm": c.arm, "n": c.n, "reflected": c.reflected,
         "max_rel_drift": c.max_rel_drift,
         **{f"post_q_{b}": float(v) for b, v in c.post_q.items()},
         **{f"pre_q_{b}": float(v) for b, v in c.pre_q.items()}} for c in rep.energy]
    with open(pre + "_report.toml", "w", newline="\n") as f:
        f.write(tomli_w.dumps(doc))
    if cfg["output.figures"] and kept:
        lo = min(p[:, 0].min() for p in kept)
        hi = max(p[:, 0].max() for p in kept)
        zlo = min(p[:, 1].min() for p in kept)
        zhi = max(p[:, 1].max() for p in kept)
        fig = Figure((lo, hi), (zlo - 1, zhi + 1), f"{sc.kind}: trajectories")
        fig.hline(0.0)
        for p in kept:
            fig.polyline(p[:, 0], p[:, 1])
        fig.save(pre + "_paths.svg")


def print_report(rep):
    for k, v in rep.summary().items():
        print(f"{k} = {v}")
    for c in rep.energy:
        q = ", ".join(f"Q_{b}={v:.9g}" for b, v in c.post_q.items())
        print(f"energy[{c.label}, arm {c.arm}] n={c.n} reflected={c.reflected} post: {q}"
              f" max drift={c.max_rel_drift:.3g}")


def cmd_run(cfg, threads):
    os.makedirs(cfg["output.dir"], exist_ok=True)
    sc, runs, (t0, t1) = simulate(cfg, threads)
    rep, trajs = build_report(cfg, sc, runs, t1)
    write_run(cfg, sc, runs, rep, trajs)
    cmd_fields(cfg, None, None, write_only=True)
    print_report(rep)
    if rep.exclusion_rate > EXCLUSION_BUDGET:
        print(f"error: node exclusion {rep.exclusion_rate:.3g} exceeds {EXCLUSION_BUDGET:g}", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


# ---------------------------------------------------------------- fields

def cmd_fields(cfg, grid, t, write_only=False):
    os.makedirs(cfg["output.dir"], exist_ok=True)
    sc = cfg.scenario()
    g = sc.geometry
    if t is None:
        t = cfg["output.time"] if cfg["output.time"] >= 0 else g.t_cross
    nx, nz = grid if grid else (cfg["output.grid_nx"], cfg["output.grid_nz"])
    cx, cz = g.packet(1).center(t)
    w = g.packet(1).width(t)
    xs = np.linspace(cx - 4 * w, cx + 4 * w, nx)
    zs = np.linspace(-abs(cz) - 4 * w, abs(cz) + 4 * w, nz)
    pre = _prefix(cfg)
    comps = pure_components(sc)
    for k, (wt, st) in enumerate(comps):
        tag = "" if len(comps) == 1 else f"_c{k}"
        aux = aux_slice(st, cfg["output.rb_slice"])
        head, rows = grid_rows(st, t, xs, zs, aux)
        write_csv(pre + f"_fields{tag}.csv", head, rows)
        if not cfg["output.figures"]:
            continue
        P = rows[:, head.index("P")].reshape(nx, nz)
        Q = rows[:, head.index("Q")].reshape(nx, nz)
        jx = rows[:, head.index("jx")].reshape(nx, nz)
        jz = rows[:, head.index("jz")].reshape(nx, nz)
        Figure((xs[0], xs[-1]), (zs[0], zs[-1]), f"{sc.kind}{tag}: density at t={t:.4g}") \
            .heatmap(xs, zs, P).save(pre + f"_P{tag}.svg")
        # clip Q for display; nodes drive it to +-inf
        qc = np.where(P > 1e-6 * np.nanmax(P), Q, np.nan)
        fin = qc[np.isfinite(qc)]
        lim = np.percentile(np.abs(fin), 98) if fin.size else 1.0
        Figure((xs[0], xs[-1]), (zs[0], zs[-1]), f"{sc.kind}{tag}: quantum potential") \
            .heatmap(xs, zs, np.clip(qc, -lim, lim), -lim, lim).save(pre + f"_Q{tag}.svg")
        seeds = [(xs[0], z) for z in np.linspace(zs[0], zs[-1], 25)]
        Figure((xs[0], xs[-1]), (zs[0], zs[-1]), f"{sc.kind}{tag}: current") \
            .heatmap(xs, zs, P).streamlines(xs, zs, jx, jz, seeds).save(pre + f"_j{tag}.svg")
    if not write_only:
        print(f"wrote {len(comps)} field grid(s) at t = {t:.9g} to {cfg['output.dir']}")
    return EXIT_OK


# ---------------------------------------------------------------- sweep

def sweep_row(cfg):
    sc = cfg.scenario()
    g = sc.geometry
    p1 = detector_probabilities(sc)[0]
    fl = plane_flux(sc, g.flux_time())
    vis = analytic_visibility(sc)[0]
    return p1, fl, vis


def cmd_sweep(cfg, param, values):
    if param not in SCHEMA:
        raise ConfigError(f"unknown key {param!r}")
    if param not in SWEEPABLE:
        raise ConfigError(f"{param} is not sweepable (allowed: {', '.join(sorted(SWEEPABLE))})")
    os.makedirs(cfg["output.dir"], exist_ok=True)
    rows = []
    for v in values:
        c = cfg.with_overrides(**{param.replace(".", "__"): float(v)})
        rows.append([float(v), *sweep_row(c)])
    path = _prefix(cfg) + f"_sweep_{param.replace('.', '_')}.csv"
    write_csv(path, [param, "P_D1", "plane_flux", "V"], rows)
    for r in rows:
        print(",".join(fmt(x) for x in r))
    return EXIT_OK


# ---------------------------------------------------------------- entry

def parser():
    p = argparse.ArgumentParser(prog="bohmflow", description="Pilot-wave trajectories in a two-arm interferometer")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="scenario config (TOML with dotted keys)")
        sp.add_argument("--out", help="output directory (overrides output.dir)")
        sp.add_argument("--seed", type=int, help="overrides ensemble.seed")
        sp.add_argument("--threads", type=int, help="worker threads (else BOHMFLOW_THREADS, else 1)")

    common(sub.add_parser("run", help="sample, integrate, reduce and write all outputs"))
    f = sub.add_parser("fields", help="field grid CSV and heatmaps")
    common(f)
    f.add_argument("--grid", type=int, nargs=2, metavar=("NX", "NZ"))
    f.add_argument("--time", type=float)
    s = sub.add_parser("sweep", help="sweep one scalar key")
    common(s)
    s.add_argument("--param", required=True)
    s.add_argument("--values", type=float, nargs="+", required=True)
    sub.add_parser("version")
    return p


def main(argv=None):
    args = parser().parse_args(argv)
    if args.cmd == "version":
        print(f"bohmflow {__version__}")
        return EXIT_OK
    try:
        cfg = load(args.config)
        over = {}
        if args.out is not None:
            over["output__dir"] = args.out
        if args.seed is not None:
            over["ensemble__seed"] = args.seed
        if over:
            cfg = cfg.with_overrides(**over)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    start = time.perf_counter()
    try:
        if args.cmd == "run":
            code = cmd_run(cfg, args.threads)
        elif args.cmd == "fields":
            code = cmd_fields(cfg, args.grid, args.time)
        else:
            code = cmd_sweep(cfg, args.param, args.values)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SamplerFailureError as e:
        print(f"numeric degeneracy: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    print(f"elapsed {time.perf_counter() - start:.1f} s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
