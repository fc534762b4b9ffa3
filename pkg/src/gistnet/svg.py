"""Minimal self-contained SVG line and scatter plots."""

from __future__ import annotations

from xml.sax.saxutils import escape

WIDTH, HEIGHT = 480, 320
MARGIN = 48
COLOURS = ("#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def _scale(lo: float, hi: float, a: float, b: float):
    if hi - lo <= 0:
        lo, hi = lo - 0.5, hi + 0.5
    return lambda v: a + (v - lo) / (hi - lo) * (b - a)


def _frame(title: str, x_label: str, y_label: str, x_range, y_range) -> list[str]:
    w, h, m = WIDTH, HEIGHT, MARGIN
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{m}" y1="{h - m}" x2="{w - m / 2}" y2="{h - m}" stroke="black"/>',
        f'<line x1="{m}" y1="{h - m}" x2="{m}" y2="{m / 2}" stroke="black"/>',
        f'<text x="{w / 2}" y="{h - 10}" text-anchor="middle" font-size="11">{escape(x_label)}</text>',
        f'<text x="12" y="{h / 2}" font-size="11" transform="rotate(-90 12 {h / 2})" '
        f'text-anchor="middle">{escape(y_label)}</text>',
        f'<text x="{m}" y="{h - m + 14}" font-size="9">{x_range[0]:.3g}</text>',
        f'<text x="{w - m / 2}" y="{h - m + 14}" font-size="9" text-anchor="end">{x_range[1]:.3g}</text>',
        f'<text x="{m - 4}" y="{h - m}" font-size="9" text-anchor="end">{y_range[0]:.3g}</text>',
        f'<text x="{m - 4}" y="{m / 2 + 8}" font-size="9" text-anchor="end">{y_range[1]:.3g}</text>',
    ]


def line_plot(series: dict[str, tuple[list[float], list[float]]], title: str = "",
              x_label: str = "x", y_label: str = "y") -> str:
    xs = [v for x, _ in series.values() for v in x]
    ys = [v for _, y in series.values() for v in y]
    xr, yr = (min(xs), max(xs)), (min(ys), max(ys))
    sx = _scale(*xr, MARGIN, WIDTH - MARGIN / 2)
    sy = _scale(*yr, HEIGHT - MARGIN, MARGIN / 2)
    parts = _frame(title, x_label, y_label, xr, yr)
    for i, (name, (x, y)) in enumerate(series.items()):
        colour = COLOURS[i % len(COLOURS)]
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{WIDTH - MARGIN}" y="{MARGIN / 2 + 14 * (i + 1)}" font-size="10" '
                     f'fill="{colour}" text-anchor="end">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def scatter_plot(points, labels, title: str = "", fills=("black", "white")) -> str:
    """One ``<circle>`` per point; fill chosen by integer label (black/white by default)."""
    xs = [float(p[0]) for p in points]
    ys = [float(p[1]) for p in points]
    xr, yr = (min(xs), max(xs)), (min(ys), max(ys))
    sx = _scale(*xr, MARGIN, WIDTH - MARGIN / 2)
    sy = _scale(*yr, HEIGHT - MARGIN, MARGIN / 2)
    parts = _frame(title, "dim 1", "dim 2", xr, yr)
    for x, y, lab in zip(xs, ys, labels):
        parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2.5" '
                     f'fill="{fills[int(lab) % len(fills)]}" stroke="black" stroke-width="0.5"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def heatmap(values, title: str = "") -> str:
    """Grey-scale raster of a [H,W] array in [0,1], one rect per cell."""
    h, w = len(values), len(values[0])
    cell = max(1, min(256 // max(h, w), 8))
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * cell}" height="{h * cell + 16}">',
             f'<text x="2" y="12" font-size="11">{escape(title)}</text>']
    for r in range(h):
        for c in range(w):
            g = int(round(255 * float(values[r][c])))
            parts.append(f'<rect x="{c * cell}" y="{16 + r * cell}" width="{cell}" height="{cell}" '
                         f'fill="rgb({g},{g},{g})"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
