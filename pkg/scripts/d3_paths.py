"""Irreversible detector: projected paths cross, configuration-space paths do not."""
import argparse
import os

import numpy as np

from bohmflow.dynamics import fan_points, integrate_points, to_trajectories
from bohmflow.scenarios import Geometry, build_detector_d3
from bohmflow.svg import Figure


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--speed", type=float, default=20.0)
    ap.add_argument("--d", type=float, default=16.0, help="pointer separation")
    ap.add_argument("--paths", type=int, default=9)
    ap.add_argument("--out", default="out/figs")
    a = ap.parse_args()
    os.makedirs(a.out, exist_ok=True)
    g = Geometry(speed=a.speed)
    s = build_detector_d3(g, d=a.d).state
    q0 = np.vstack([fan_points(s, 0.0, b, a.paths, span=2.0) for b in (0, 1)])
    trs = to_trajectories(s, integrate_points(s, q0, 0.0, g.t_end, record_every=2), audit=False)
    xa, xb = g.i_window()
    fig = Figure((1.3 * xa, 1.3 * xb), (-6, 6), "D3: atom paths (projection)")
    fig.hline(0.0)
    side = Figure((1.3 * xa, 1.3 * xb), (-4, a.d + 4), "D3: pointer coordinate", ylabel="r_c")
    for tr in trs:
        fig.polyline(tr.q[:, 0], tr.q[:, 1])
        side.polyline(tr.q[:, 0], tr.q[:, 2])
    fig.save(os.path.join(a.out, "d3_paths.svg"))
    side.save(os.path.join(a.out, "d3_pointer.svg"))
    lo = [tr for tr in trs if tr.q[0, 1] < 0]
    up = [tr for tr in trs if tr.q[0, 1] > 0]
    d2 = min(np.min(np.linalg.norm(p.q[:, :2] - r.q[:, :2], axis=1)) for p in lo for r in up)
    d3 = min(np.min(np.linalg.norm(p.q - r.q, axis=1)) for p in lo for r in up)
    print(f"min projected distance {d2:.3g}, min configuration-space distance {d3:.3g}")
    print("wrote", a.out)


if __name__ == "__main__":
    main()
