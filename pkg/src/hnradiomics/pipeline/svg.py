"""Minimal self-contained SVG step plots for Kaplan-Meier curves."""
from __future__ import annotations

from xml.sax.saxutils import escape

COLOURS = {"low": "#1b7837", "medium": "#d98c00", "high": "#b2182b"}
WIDTH, HEIGHT, PAD = 520, 340, 48


def km_svg(curves, title, t_max=None):
    """``curves`` maps a group name to (times, survival) step coordinates starting at (0, 1)."""
    t_max = t_max or max((max(t) for t, _ in curves.values() if len(t)), default=1.0) or 1.0
    sx = (WIDTH - 2 * PAD) / t_max
    sy = HEIGHT - 2 * PAD

    def pt(t, s):
        return f"{PAD + t * sx:.2f},{HEIGHT - PAD - s * sy:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<line x1="{PAD}" y1="{HEIGHT - PAD}" x2="{WIDTH - PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle" font-family="sans-serif" font-size="11">months</text>',
        f'<text x="14" y="{HEIGHT / 2}" font-family="sans-serif" font-size="11" '
        f'transform="rotate(-90 14 {HEIGHT / 2})" text-anchor="middle">event-free probability</text>',
    ]
    for k, (name, (times, surv)) in enumerate(curves.items()):
        pts = [pt(0.0, 1.0)]
        last = 1.0
        for t, s in zip(times, surv):
            pts.append(pt(t, last))
            pts.append(pt(t, s))
            last = s
        pts.append(pt(t_max, last))
        colour = COLOURS.get(name, "#333333")
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="2" points="{" ".join(pts)}"/>')
        parts.append(f'<text x="{WIDTH - PAD - 60}" y="{PAD + 16 * k}" font-family="sans-serif" font-size="11" '
                     f'fill="{colour}">{escape(str(name))}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
