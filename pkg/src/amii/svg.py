"""Hand-emitted SVG line plots: one polyline per series, no dependencies."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 60, 20, 36, 44


def line_plot(path: str, series: dict[str, np.ndarray], title: str = "",
              x_label: str = "", y_label: str = "",
              x_values: dict[str, np.ndarray] | None = None,
              width: int = 900, height: int = 360) -> None:
    """Write an SVG plot of the named series (each a 1-D value array).

    Per-series x coordinates may be supplied via `x_values`; otherwise the
    sample index is used.
    """
    if not series:
        raise ValueError("line_plot needs at least one series")
    series = {name: np.asarray(v, dtype=np.float64) for name, v in series.items()}
    xs = {}
    for name, values in series.items():
        if x_values and name in x_values:
            xs[name] = np.asarray(x_values[name], dtype=np.float64)
        else:
            xs[name] = np.arange(len(values), dtype=np.float64)

    x_min = min(float(v.min()) for v in xs.values() if len(v))
    x_max = max(float(v.max()) for v in xs.values() if len(v))
    y_min = min(float(v.min()) for v in series.values() if len(v))
    y_max = max(float(v.max()) for v in series.values() if len(v))
    if x_max == x_min:
        x_max = x_min + 1.0
    if y_max == y_min:
        y_max = y_min + 1.0

    plot_w = width - MARGIN_L - MARGIN_R
    plot_h = height - MARGIN_T - MARGIN_B

    def sx(x: float) -> float:
        return MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w

    def sy(y: float) -> float:
        return MARGIN_T + (y_max - y) / (y_max - y_min) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" '
        f'width="{width}" height="{height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
        f'font-size="14">{escape(title)}</text>',
        # axes
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" '
        f'y2="{MARGIN_T + plot_h}" stroke="black"/>',
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T + plot_h}" '
        f'x2="{MARGIN_L + plot_w}" y2="{MARGIN_T + plot_h}" stroke="black"/>',
        f'<text x="{MARGIN_L + plot_w / 2:.1f}" y="{height - 8}" '
        f'text-anchor="middle" font-size="12">{escape(x_label)}</text>',
        f'<text x="14" y="{MARGIN_T + plot_h / 2:.1f}" text-anchor="middle" '
        f'font-size="12" transform="rotate(-90 14 {MARGIN_T + plot_h / 2:.1f})">'
        f'{escape(y_label)}</text>',
        f'<text x="{MARGIN_L - 6}" y="{sy(y_max) + 4:.1f}" text-anchor="end" '
        f'font-size="10">{y_max:.3g}</text>',
        f'<text x="{MARGIN_L - 6}" y="{sy(y_min) + 4:.1f}" text-anchor="end" '
        f'font-size="10">{y_min:.3g}</text>',
        f'<text x="{sx(x_min):.1f}" y="{MARGIN_T + plot_h + 14}" '
        f'text-anchor="middle" font-size="10">{x_min:.4g}</text>',
        f'<text x="{sx(x_max):.1f}" y="{MARGIN_T + plot_h + 14}" '
        f'text-anchor="middle" font-size="10">{x_max:.4g}</text>',
    ]

    for i, (name, values) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        pts = " ".join(f"{sx(float(x)):.2f},{sy(float(y)):.2f}"
                       for x, y in zip(xs[name], values))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" '
                     f'points="{pts}"/>')
        lx = MARGIN_L + plot_w - 150
        ly = MARGIN_T + 14 + 16 * i
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 28}" y="{ly}" font-size="11">'
                     f'{escape(name)}</text>')

    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
