"""Bubble chart of topics: one row per topic, hours of the day on the x axis,
one circle per word with area proportional to its probability."""

from __future__ import annotations

import math
from typing import Iterable, Mapping, Sequence
from xml.sax.saxutils import escape

from .report import REPORT_SCHEMA_VERSION, TopicSummary

PALETTE = (
    "#1f78b4", "#e31a1c", "#33a02c", "#ff7f00", "#6a3d9a", "#b15928",
    "#a6cee3", "#fb9a99", "#b2df8a", "#fdbf6f", "#cab2d6", "#ffff99",
)

CELL = 36.0
ROW = 44.0
LEFT = 110.0
TOP = 40.0
MAX_RADIUS = 16.0
SPREAD = 7.0


def object_palette(objects: Iterable[str]) -> dict[str, str]:
    """Colours for objects sorted lexicographically, assigned round-robin."""
    return {obj: PALETTE[i % len(PALETTE)] for i, obj in enumerate(sorted(set(objects)))}


def _f(x: float) -> str:
    return f"{x:.4f}".rstrip("0").rstrip(".")


def render_svg(summaries: Sequence[TopicSummary], palette: Mapping[str, str] | None = None) -> str:
    """Standalone SVG 1.1 document; identical input gives identical bytes."""
    if not summaries:
        raise ValueError("render_svg needs at least one topic summary")
    objects = sorted({w.object_id for s in summaries for w in s.words})
    palette = dict(palette) if palette is not None else object_palette(objects)
    missing = [o for o in objects if o not in palette]
    if missing:
        palette.update({o: PALETTE[(len(palette) + i) % len(PALETTE)] for i, o in enumerate(missing)})
    p_max = max((w.probability for s in summaries for w in s.words), default=0.0)
    width = LEFT + 24 * CELL + 20
    legend_rows = math.ceil(len(objects) / 4) if objects else 0
    plot_bottom = TOP + len(summaries) * ROW
    height = plot_bottom + 40 + legend_rows * 20 + 10

    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        '<!DOCTYPE svg PUBLIC "-//W3C//DTD SVG 1.1//EN" '
        '"http://www.w3.org/Graphics/SVG/1.1/DTD/svg11.dtd">',
        f'<svg version="1.1" xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" '
        f'height="{_f(height)}" viewBox="0 0 {_f(width)} {_f(height)}" '
        f'font-family="sans-serif" font-size="11">',
        f'<metadata>{{"schema_version":"{REPORT_SCHEMA_VERSION}"}}</metadata>',
        f'<rect x="0" y="0" width="{_f(width)}" height="{_f(height)}" fill="#ffffff"/>',
    ]
    out.append('<g class="axis">')
    for h in range(24):
        x = LEFT + (h + 0.5) * CELL
        out.append(f'<line x1="{_f(x)}" y1="{_f(TOP)}" x2="{_f(x)}" y2="{_f(plot_bottom)}" '
                   f'stroke="#eeeeee"/>')
        out.append(f'<text x="{_f(x)}" y="{_f(plot_bottom + 16)}" text-anchor="middle">{h}</text>')
    out.append(f'<text x="{_f(LEFT + 12 * CELL)}" y="{_f(plot_bottom + 32)}" '
               f'text-anchor="middle">hour of day</text>')
    out.append("</g>")

    for row, summary in enumerate(summaries):
        cy = TOP + (row + 0.5) * ROW
        out.append(f'<g class="topic" id="topic-{summary.topic_id}">')
        out.append(f'<text x="8" y="{_f(cy + 4)}">Topic {summary.topic_id} '
                   f'({summary.salience:.2f})</text>')
        by_hour: dict[int, list] = {}
        for w in summary.words:
            by_hour.setdefault(w.hour, []).append(w)
        for hour in sorted(by_hour):
            words = by_hour[hour]
            for i, w in enumerate(words):
                cx = LEFT + (hour + 0.5) * CELL + (i - (len(words) - 1) / 2) * SPREAD
                r = MAX_RADIUS * math.sqrt(w.probability / p_max) if p_max > 0 else 0.0
                out.append(
                    f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="{_f(r)}" '
                    f'fill="{palette[w.object_id]}" fill-opacity="0.8" stroke="#333333" '
                    f'stroke-width="0.5"><title>{escape(w.object_id)} @ {hour}: '
                    f'{w.probability:.4f}</title></circle>'
                )
        out.append("</g>")

    out.append('<g class="legend">')
    for i, obj in enumerate(objects):
        x = LEFT + (i % 4) * 6 * CELL
        y = plot_bottom + 46 + (i // 4) * 20
        out.append(f'<rect x="{_f(x)}" y="{_f(y - 9)}" width="10" height="10" fill="{palette[obj]}"/>')
        out.append(f'<text x="{_f(x + 14)}" y="{_f(y)}">{escape(obj)}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
