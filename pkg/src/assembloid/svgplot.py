"""Minimal deterministic SVG line charts (no timestamps, no random ids)."""

from __future__ import annotations

from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def line_chart(series: list[tuple[str, list[float], list[float]]], title: str,
               xlabel: str, ylabel: str, width: int = 480, height: int = 320) -> str:
    """``series`` is ``[(name, xs, ys), ...]``; one ``<polyline>`` per series.

    Each polyline carries its raw values in ``data-x``/``data-y`` attributes.
    """
    pad_l, pad_r, pad_t, pad_b = 56, 16, 28, 40
    xs = [x for _, sx, _ in series for x in sx] or [0.0, 1.0]
    ys = [y for _, _, sy in series for y in sy] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def px(x):
        return pad_l + (x - x0) / (x1 - x0) * pw

    def py(y):
        return pad_t + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{pad_l}" y1="{pad_t + ph}" x2="{pad_l + pw}" y2="{pad_t + ph}" stroke="black"/>',
        f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{pad_t + ph}" stroke="black"/>',
        f'<text x="{pad_l + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="11">{escape(xlabel)}</text>',
        f'<text x="14" y="{pad_t + ph / 2:.1f}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 14 {pad_t + ph / 2:.1f})">{escape(ylabel)}</text>',
        f'<text x="{pad_l - 4}" y="{pad_t + ph:.1f}" text-anchor="end" font-size="9">{y0:.4g}</text>',
        f'<text x="{pad_l - 4}" y="{pad_t + 8:.1f}" text-anchor="end" font-size="9">{y1:.4g}</text>',
        f'<text x="{pad_l}" y="{pad_t + ph + 14:.1f}" text-anchor="middle" font-size="9">{x0:.4g}</text>',
        f'<text x="{pad_l + pw}" y="{pad_t + ph + 14:.1f}" text-anchor="middle" font-size="9">{x1:.4g}</text>',
    ]
    for k, (name, sx, sy) in enumerate(series):
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(sx, sy))
        color = PALETTE[k % len(PALETTE)]
        out.append(
            f'<polyline data-series="{escape(name)}" data-x="{" ".join(repr(float(x)) for x in sx)}" '
            f'data-y="{" ".join(repr(float(y)) for y in sy)}" points="{pts}" fill="none" '
            f'stroke="{color}" stroke-width="1.2"/>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
