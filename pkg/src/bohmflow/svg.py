"""Minimal native SVG output: heatmaps, polylines and streamlines."""
import numpy as np

W, H = 640, 480
MARGIN = 56


def _ramp(u):
    # blue -> white -> red, u in [0, 1]
    u = float(np.clip(u, 0.0, 1.0))
    if u < 0.5:
        a = u / 0.5
        r, g, b = 40 + 215 * a, 70 + 185 * a, 160 + 95 * a
    else:
        a = (u - 0.5) / 0.5
        r, g, b = 255, 255 - 200 * a, 255 - 215 * a
    return f"#{int(r):02x}{int(g):02x}{int(b):02x}"


class Figure:
    def __init__(self, xlim, ylim, title="", xlabel="x", ylabel="z", width=W, height=H):
        self.xlim = tuple(map(float, xlim))
        self.ylim = tuple(map(float, ylim))
        self.w, self.h = width, height
        self.parts = []
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel

    def _px(self, x, y):
        x0, x1 = self.xlim
        y0, y1 = self.ylim
        u = MARGIN + (np.asarray(x) - x0) / (x1 - x0) * (self.w - 2 * MARGIN)
        v = self.h - MARGIN - (np.asarray(y) - y0) / (y1 - y0) * (self.h - 2 * MARGIN)
        return u, v

    def heatmap(self, xs, ys, values, vmin=None, vmax=None):
        """values[i, j] at (xs[i], ys[j]); nan cells are left blank."""
        v = np.asarray(values, dtype=float)
        fin = v[np.isfinite(v)]
        lo = float(fin.min()) if vmin is None and fin.size else (vmin or 0.0)
        hi = float(fin.max()) if vmax is None and fin.size else (vmax or 1.0)
        span = hi - lo if hi > lo else 1.0
        dx = (xs[-1] - xs[0]) / max(len(xs) - 1, 1)
        dy = (ys[-1] - ys[0]) / max(len(ys) - 1, 1)
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                if not np.isfinite(v[i, j]):
                    continue
                u0, v0 = self._px(x - dx / 2, y + dy / 2)
                u1, v1 = self._px(x + dx / 2, y - dy / 2)
                self.parts.append(
                    f'<rect x="{u0:.2f}" y="{v0:.2f}" width="{u1 - u0 + 0.3:.2f}" '
                    f'height="{v1 - v0 + 0.3:.2f}" fill="{_ramp((v[i, j] - lo) / span)}"/>')
        return self

    def polyline(self, x, y, color="#222", width=0.8):
        u, v = self._px(x, y)
        ok = np.isfinite(u) & np.isfinite(v)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(u[ok], v[ok]))
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>')
        return self

    def hline(self, y, color="#888"):
        u0, v0 = self._px(self.xlim[0], y)
        u1, _ = self._px(self.xlim[1], y)
        self.parts.append(f'<line x1="{u0:.2f}" y1="{v0:.2f}" x2="{u1:.2f}" y2="{v0:.2f}" '
                          f'stroke="{color}" stroke-dasharray="4,3"/>')
        return self

    def streamlines(self, xs, ys, vx, vy, seeds, steps=200, color="#333"):
        """Streamlines of a gridded vector field by fixed-length Euler steps."""
        xs, ys = np.asarray(xs), np.asarray(ys)
        ds = 0.5 * min(xs[1] - xs[0], ys[1] - ys[0])
        for sx, sy in seeds:
            px, py = [sx], [sy]
            x, y = sx, sy
            for _ in range(steps):
                if not (xs[0] <= x <= xs[-1] and ys[0] <= y <= ys[-1]):
                    break
                i = min(np.searchsorted(xs, x), len(xs) - 1)
                j = min(np.searchsorted(ys, y), len(ys) - 1)
                a, b = vx[i, j], vy[i, j]
                s = np.hypot(a, b)
                if not np.isfinite(s) or s == 0:
                    break
                x, y = x + ds * a / s, y + ds * b / s
                px.append(x)
                py.append(y)
            if len(px) > 1:
                self.polyline(np.array(px), np.array(py), color=color, width=0.6)
        return self

    def _axes(self):
        out = []
        x0, v0 = self._px(self.xlim[0], self.ylim[0])
        x1, v1 = self._px(self.xlim[1], self.ylim[1])
        out.append(f'<rect x="{x0:.2f}" y="{v1:.2f}" width="{x1 - x0:.2f}" height="{v0 - v1:.2f}" '
                   f'fill="none" stroke="#000"/>')
        for k in range(5):
            xv = self.xlim[0] + k / 4 * (self.xlim[1] - self.xlim[0])
            yv = self.ylim[0] + k / 4 * (self.ylim[1] - self.ylim[0])
            u, _ = self._px(xv, self.ylim[0])
            _, v = self._px(self.xlim[0], yv)
            out.append(f'<text x="{u:.2f}" y="{v0 + 16:.2f}" font-size="10" text-anchor="middle">{xv:.3g}</text>')
            out.append(f'<text x="{x0 - 6:.2f}" y="{v + 3:.2f}" font-size="10" text-anchor="end">{yv:.3g}</text>')
        out.append(f'<text x="{self.w / 2:.1f}" y="{self.h - 12}" font-size="12" text-anchor="middle">{self.xlabel}</text>')
        out.append(f'<text x="14" y="{self.h / 2:.1f}" font-size="12" text-anchor="middle" '
                   f'transform="rotate(-90 14 {self.h / 2:.1f})">{self.ylabel}</text>')
        out.append(f'<text x="{self.w / 2:.1f}" y="22" font-size="14" text-anchor="middle">{self.title}</text>')
        return out

    def render(self):
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" '
                f'viewBox="0 0 {self.w} {self.h}">')
        body = ['<rect width="100%" height="100%" fill="#fff"/>'] + self.parts + self._axes()
        return "\n".join([head] + body + ["</svg>"]) + "\n"

    def save(self, path):
        with open(path, "w", newline="\n") as f:
            f.write(self.render())
