"""Coherent two-arm trajectories through the overlap region, plus Q at the crossing time."""
import argparse
import os

import numpy as np

from bohmflow import fields as F
from bohmflow.analysis import crossing_count
from bohmflow.dynamics import fan_points, integrate_points, to_trajectories
from bohmflow.scenarios import Geometry, build_no_device
from bohmflow.svg import Figure


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--speed", type=float, default=20.0)
    ap.add_argument("--paths", type=int, default=15, help="starts per arm")
    ap.add_argument("--out", default="out/figs")
    a = ap.parse_args()
    os.makedirs(a.out, exist_ok=True)
    g = Geometry(speed=a.speed)
    s = build_no_device(g).state
    q0 = np.vstack([fan_points(s, 0.0, b, a.paths, span=2.0) for b in (0, 1)])
    res = integrate_points(s, q0, 0.0, g.t_end, record_every=5)
    trs = to_trajectories(s, res, audit=False)
    print("crossings:", crossing_count(res))

    xa, xb = g.i_window()
    fig = Figure((1.3 * xa, 1.3 * xb), (-6, 6), f"no device, v={a.speed:g}: trajectories in I")
    fig.hline(0.0)
    for tr in trs:
        fig.polyline(tr.q[:, 0], tr.q[:, 1])
    fig.save(os.path.join(a.out, "no_device_paths.svg"))

    t = g.t_cross
    xs = np.linspace(-4, 4, 161)
    zs = np.linspace(-4, 4, 161)
    X, Z = np.meshgrid(xs, zs, indexing="ij")
    q = np.stack([X, Z], -1).reshape(-1, 2)
    Q = F.quantum_potential(s, q, t, nodes="nan").reshape(X.shape)
    P = F.density(s, q, t).reshape(X.shape)
    Q = np.where(P > 1e-4 * P.max(), Q, np.nan)
    lim = np.nanpercentile(np.abs(Q), 95)
    Figure((xs[0], xs[-1]), (zs[0], zs[-1]), "quantum potential at the crossing time") \
        .heatmap(xs, zs, np.clip(Q, -lim, lim), -lim, lim).save(os.path.join(a.out, "no_device_Q.svg"))
    print("wrote", a.out)


if __name__ == "__main__":
    main()
