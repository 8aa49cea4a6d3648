"""Deterministic SVG scatter plots for 2-D projections of labeled data."""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError

SIZE = 600
MARGIN = 50
PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
)


def _bounds(values):
    if len(values) == 0:
        return -1.0, 1.0
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        return lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def emit_scatter_svg(points, labels, axes, path):
    """Write a 600x600 scatter of two chosen coordinates, one circle per
    point, colored by class from a fixed 8-color palette. Output bytes depend
    only on the inputs."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if len(points) and points.ndim != 2:
        raise DimensionError("points must be a 2-D array")
    ax, ay = axes
    if len(points):
        if max(ax, ay) >= points.shape[1] or min(ax, ay) < 0:
            raise ContractError(f"axes {axes} out of range for dim {points.shape[1]}")
        xs, ys = points[:, ax], points[:, ay]
    else:
        xs = ys = np.empty(0)
    x_lo, x_hi = _bounds(xs)
    y_lo, y_hi = _bounds(ys)
    span = SIZE - 2 * MARGIN

    def sx(v):
        return MARGIN + span * (v - x_lo) / (x_hi - x_lo)

    def sy(v):
        return SIZE - MARGIN - span * (v - y_lo) / (y_hi - y_lo)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" '
        f'viewBox="0 0 {SIZE} {SIZE}">',
        f'<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white"/>',
        f'<line x1="{MARGIN}" y1="{SIZE - MARGIN}" x2="{SIZE - MARGIN}" '
        f'y2="{SIZE - MARGIN}" stroke="black" stroke-width="1"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{SIZE - MARGIN}" '
        f'stroke="black" stroke-width="1"/>',
        f'<text x="{SIZE // 2}" y="{SIZE - 12}" text-anchor="middle" '
        f'font-size="14">dim {ax}</text>',
        f'<text x="16" y="{SIZE // 2}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 16 {SIZE // 2})">dim {ay}</text>',
        f'<text x="{MARGIN}" y="{SIZE - MARGIN + 16}" font-size="10">{x_lo:.3g}</text>',
        f'<text x="{SIZE - MARGIN}" y="{SIZE - MARGIN + 16}" text-anchor="end" '
        f'font-size="10">{x_hi:.3g}</text>',
        f'<text x="{MARGIN - 4}" y="{SIZE - MARGIN}" text-anchor="end" '
        f'font-size="10">{y_lo:.3g}</text>',
        f'<text x="{MARGIN - 4}" y="{MARGIN + 8}" text-anchor="end" '
        f'font-size="10">{y_hi:.3g}</text>',
    ]
    for x, y, label in zip(xs, ys, labels):
        color = PALETTE[int(label) % len(PALETTE)]
        out.append(f'<circle cx="{sx(x):.3f}" cy="{sy(y):.3f}" r="2.5" fill="{color}"/>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
    return path
