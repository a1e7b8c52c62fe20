"""Detector probability, plane flux and fringe visibility against the device overlap alpha."""
import argparse
import os

import numpy as np

from bohmflow.analysis import plane_flux
from bohmflow.scenarios import Geometry, analytic_visibility, build_overlap_device, detector_probabilities
from bohmflow.svg import Figure


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=41)
    ap.add_argument("--phase", type=float, default=0.0, help="arg(alpha) in radians")
    ap.add_argument("--out", default="out/figs")
    a = ap.parse_args()
    os.makedirs(a.out, exist_ok=True)
    g = Geometry()
    mags = np.linspace(0, 1, a.n)
    rows = []
    for m in mags:
        al = m * np.exp(1j * a.phase)
        sc = build_overlap_device(g, alpha=al)
        rows.append((m, detector_probabilities(sc)[0], plane_flux(sc, g.flux_time()), analytic_visibility(sc)[0]))
    rows = np.array(rows)
    with open(os.path.join(a.out, "alpha_sweep.csv"), "w", newline="\n") as f:
        f.write("abs_alpha,P_D1,plane_flux,V\n")
        for r in rows:
            f.write(",".join(f"{v:.9g}" for v in r) + "\n")
    fig = Figure((0, 1), (0, 1), f"arg(alpha) = {a.phase:g}", xlabel="|alpha|", ylabel="P_D1 (blue), V (red)")
    fig.polyline(rows[:, 0], rows[:, 1], color="#1b6ca8", width=1.5)
    fig.polyline(rows[:, 0], rows[:, 3], color="#c0392b", width=1.5)
    fig.save(os.path.join(a.out, "alpha_sweep.svg"))
    print("wrote", a.out)


if __name__ == "__main__":
    main()
