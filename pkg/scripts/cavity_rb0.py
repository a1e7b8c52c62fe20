"""Cavity scenario: atom tracks and box-particle coordinate for fixed r_b0."""
import argparse
import os

import numpy as np

from bohmflow.analysis import wobble_signature
from bohmflow.dynamics import fan_points, integrate_points, to_trajectories
from bohmflow.scenarios import Geometry, build_cavity
from bohmflow.svg import Figure

COLORS = ("#1b6ca8", "#c0392b", "#27ae60", "#8e44ad")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--speed", type=float, default=20.0)
    ap.add_argument("--rb0", type=float, nargs="+", default=[0.5, 1.2, 2.0, 2.7])
    ap.add_argument("--paths", type=int, default=9)
    ap.add_argument("--out", default="out/figs")
    a = ap.parse_args()
    os.makedirs(a.out, exist_ok=True)
    g = Geometry(speed=a.speed)
    s = build_cavity(g).state
    xa, xb = g.i_window()
    rb_fig = Figure((0, g.t_end), (0, np.pi), "box particle coordinate", xlabel="t", ylabel="r_b")
    rows = []
    for k, rb0 in enumerate(a.rb0):
        q0 = np.vstack([fan_points(s, 0.0, b, a.paths, span=2.0, aux=[rb0]) for b in (0, 1)])
        trs = to_trajectories(s, integrate_points(s, q0, 0.0, g.t_end, record_every=2), audit=False)
        fig = Figure((1.3 * xa, 1.3 * xb), (-6, 6), f"cavity, r_b0 = {rb0:g}")
        fig.hline(0.0)
        for i, tr in enumerate(trs):
            fig.polyline(tr.q[:, 0], tr.q[:, 1])
            rb_fig.polyline(tr.t, tr.q[:, 2], color=COLORS[k % len(COLORS)], width=0.5)
            rows.append((rb0, i, wobble_signature(tr, (xa, xb)), tr.q[-1, 1], tr.q[-1, 2]))
        fig.save(os.path.join(a.out, f"cavity_rb0_{k}.svg"))
    rb_fig.save(os.path.join(a.out, "cavity_rb.svg"))
    with open(os.path.join(a.out, "cavity_rb0.csv"), "w", newline="\n") as f:
        f.write("rb0,path,wobbles,z_end,rb_end\n")
        for r in rows:
            f.write(",".join(f"{v:.9g}" for v in r) + "\n")
    print("wrote", a.out)


if __name__ == "__main__":
    main()
