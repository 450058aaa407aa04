"""Static SVG report rendering: training curves and prediction scatter.

Hand-rolled vector markup so output bytes are a pure function of the inputs
(no display server, no library version drift). Data extents are embedded as
``data-*`` attributes for machine checking.
"""

from __future__ import annotations


def _scale(values, lo, hi, out_lo, out_hi):
    span = (hi - lo) or 1.0
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in values]


def _fmt(x):
    return f"{x:.3f}"


def _panel(x, y, width, height, xs, ys_named, title):
    """One plot panel with polylines; ys_named is [(label, color, ys)]."""
    parts = []
    xmin, xmax = min(xs), max(xs)
    all_y = [v for _, _, ys in ys_named for v in ys]
    ymin, ymax = min(all_y), max(all_y)
    parts.append(f'<g data-title="{title}" data-xmin="{xmin}" data-xmax="{xmax}" '
                 f'data-ymin="{ymin}" data-ymax="{ymax}">')
    parts.append(f'<rect x="{x}" y="{y}" width="{width}" height="{height}" '
                 f'fill="white" stroke="black"/>')
    parts.append(f'<text x="{x + 5}" y="{y + 15}" font-size="12">{title}</text>')
    px = _scale(xs, xmin, xmax, x + 10, x + width - 10)
    for i, (label, color, ys) in enumerate(ys_named):
        py = _scale(ys, ymin, ymax, y + height - 10, y + 10)
        pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px, py))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}"/>')
        parts.append(f'<text x="{x + 5}" y="{y + 30 + 14 * i}" font-size="10" '
                     f'fill="{color}">{label}</text>')
    parts.append("</g>")
    return "\n".join(parts)


def _scatter(x, y, width, height, pairs_named, title):
    parts = []
    all_v = [v for _, _, pairs in pairs_named for pair in pairs for v in pair]
    vmin, vmax = min(all_v), max(all_v)
    parts.append(f'<g data-title="{title}" data-xmin="{vmin}" data-xmax="{vmax}" '
                 f'data-ymin="{vmin}" data-ymax="{vmax}">')
    parts.append(f'<rect x="{x}" y="{y}" width="{width}" height="{height}" '
                 f'fill="white" stroke="black"/>')
    parts.append(f'<text x="{x + 5}" y="{y + 15}" font-size="12">{title}</text>')
    for i, (label, color, pairs) in enumerate(pairs_named):
        for gx, py in pairs:
            cx = _scale([gx], vmin, vmax, x + 10, x + width - 10)[0]
            cy = _scale([py], vmin, vmax, y + height - 10, y + 10)[0]
            parts.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="2.5" '
                         f'fill="{color}"/>')
        parts.append(f'<text x="{x + 5}" y="{y + 30 + 14 * i}" font-size="10" '
                     f'fill="{color}">{label}</text>')
    parts.append("</g>")
    return "\n".join(parts)


def render_report(steps, epochs, scatter_pairs=None):
    """Build the SVG report string.

    steps: [(step, loss)]; epochs: [(epoch, ccc_v, ccc_a)];
    scatter_pairs: optional {"valence": [(gold, pred)], "arousal": [...]}.
    """
    if not steps and not epochs:
        raise ValueError("nothing to plot: empty log")
    panels = []
    yoff = 10
    if steps:
        panels.append(_panel(10, yoff, 760, 220,
                             [s for s, _ in steps],
                             [("loss", "crimson", [l for _, l in steps])],
                             "training loss per step"))
        yoff += 240
    if epochs:
        panels.append(_panel(10, yoff, 760, 220,
                             [e for e, _, _ in epochs],
                             [("ccc_valence", "steelblue", [v for _, v, _ in epochs]),
                              ("ccc_arousal", "darkorange", [a for _, _, a in epochs])],
                             "validation CCC per epoch"))
        yoff += 240
    if scatter_pairs:
        panels.append(_scatter(10, yoff, 760, 220,
                               [("valence", "steelblue", scatter_pairs["valence"]),
                                ("arousal", "darkorange", scatter_pairs["arousal"])],
                               "prediction vs gold"))
        yoff += 240
    body = "\n".join(panels)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="780" '
            f'height="{yoff}">\n{body}\n</svg>\n')


def parse_log_lines(lines):
    """Parse TrainLog text lines back into (steps, epochs)."""
    steps, epochs = [], []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        fields = dict(part.split("=", 1) for part in line.split())
        if "step" in fields:
            steps.append((int(fields["step"]), float(fields["loss"])))
        elif "epoch" in fields:
            epochs.append((int(fields["epoch"]), float(fields["ccc_v"]),
                           float(fields["ccc_a"])))
    return steps, epochs
