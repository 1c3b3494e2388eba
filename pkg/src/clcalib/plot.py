"""Minimal SVG calibration plots (no plotting library needed)."""

from __future__ import annotations

from xml.sax.saxutils import escape

SIZE = 360
MARGIN = 48


def _color(tau: float, lo: float = 0.0, hi: float = 0.95) -> str:
    # blue at low rank correlation, red at high
    t = min(max((tau - lo) / (hi - lo), 0.0), 1.0)
    r = int(round(40 + 200 * t))
    b = int(round(240 - 200 * t))
    return f"#{r:02x}30{b:02x}"


def _xy(p: float, e: float) -> tuple[float, float]:
    span = SIZE - 2 * MARGIN
    return MARGIN + p * span, SIZE - MARGIN - e * span


def calibration_svg(curves, taus: dict[str, float], title: str) -> str:
    """Effective versus nominal coverage, one polyline per setting.

    ``taus`` maps each curve's setting id to its rank correlation (for color).
    """
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">',
        f'<rect width="{SIZE}" height="{SIZE}" fill="white"/>',
        f'<text x="{SIZE / 2}" y="20" text-anchor="middle" font-size="13" font-family="sans-serif">{escape(title)}</text>',
    ]
    x0, y0 = _xy(0, 0)
    x1, y1 = _xy(1, 1)
    parts.append(f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" fill="none" stroke="black"/>')
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="gray" stroke-dasharray="4 3"/>')
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        tx, _ = _xy(tick, 0)
        _, ty = _xy(0, tick)
        parts.append(f'<text x="{tx}" y="{y0 + 16}" text-anchor="middle" font-size="10" font-family="sans-serif">{tick:g}</text>')
        parts.append(f'<text x="{x0 - 6}" y="{ty + 3}" text-anchor="end" font-size="10" font-family="sans-serif">{tick:g}</text>')
    parts.append(
        f'<text x="{SIZE / 2}" y="{SIZE - 10}" text-anchor="middle" font-size="11" font-family="sans-serif">nominal</text>'
    )
    parts.append(
        f'<text x="14" y="{SIZE / 2}" text-anchor="middle" font-size="11" font-family="sans-serif" '
        f'transform="rotate(-90 14 {SIZE / 2})">effective</text>'
    )
    for c in curves:
        pts = [(0.0, 0.0)] + list(zip(c.grid, c.effective)) + [(1.0, 1.0)]
        path = " ".join(f"{x:.2f},{y:.2f}" for x, y in (_xy(p, e) for p, e in pts))
        color = _color(taus.get(c.setting_id, 0.0))
        parts.append(
            f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.2">'
            f"<title>{escape(c.setting_id)}</title></polyline>"
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
