"""Standalone SVG rendering of a scene, its uncertain map and predictions.

Ego frame meters map to pixels at ``PX_PER_M`` with y pointing up. Number
formatting is fixed-point so output is byte-stable.
"""

from __future__ import annotations

import math

import numpy as np

from .map_model import HALF_EXTENT, ElementClass, denormalize_from_bev

PX_PER_M = 10.0
PALETTE = {
    ElementClass.BOUNDARY: "#2e9e44",
    ElementClass.DIVIDER: "#f28c28",
    ElementClass.PED_CROSSING: "#2f6fd6",
    ElementClass.CENTERLINE: "#8c8c8c",
}
EGO_COLOR = "#d62728"
BAND_COLOR = "#8e44ad"
ELLIPSE_COLOR = "#8e44ad"
ELLIPSE_GAIN_PX = 4.0  # radius in px per sqrt(nat)
BAND_WIDTH_PX = 8.0
MODE_COLOR = "#1f77b4"


def _f(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _xy(p):
    hx, hy = HALF_EXTENT
    return (p[0] + hx) * PX_PER_M, (hy - p[1]) * PX_PER_M


def _points_attr(points_m) -> str:
    return " ".join(f"{_f(x)},{_f(y)}" for x, y in (_xy(p) for p in points_m))


def ellipse_radius(beta: float) -> float:
    return ELLIPSE_GAIN_PX * math.sqrt(max(float(beta), 0.0))


def band_opacity(delta_c) -> float:
    return float(np.max(delta_c)) if np.size(delta_c) else 0.0


def render_svg(scene, uncertain_elements=(), predictions=None) -> str:
    """SVG document for ``scene``.

    ``uncertain_elements`` are estimator outputs whose ids must exist in the
    scene; ``predictions`` maps agent id to a PredictionSet (or is a list of
    ``(agent_id, PredictionSet)``).
    """
    table = scene.element_table()
    bad = sorted({int(u.id) for u in uncertain_elements} - set(table))
    if bad:
        raise ValueError(f"uncertain elements reference unknown element ids {bad}")
    preds = dict(predictions or {})
    agents = {a.id: a for a in scene.agents}
    bad = sorted(set(preds) - set(agents))
    if bad:
        raise ValueError(f"predictions reference unknown agent ids {bad}")

    hx, hy = HALF_EXTENT
    w, h = 2 * hx * PX_PER_M, 2 * hy * PX_PER_M
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(w)}" height="{_f(h)}" viewBox="0 0 {_f(w)} {_f(h)}">',
        f'<rect x="0" y="0" width="{_f(w)}" height="{_f(h)}" fill="#ffffff"/>',
        '<g id="ground-truth" fill="none" stroke-width="1" stroke-dasharray="3,3" opacity="0.5">',
    ]
    for el in scene.elements:
        pts = el.points[np.all(np.abs(el.points) <= HALF_EXTENT, axis=1)]
        if len(pts) >= 2:
            out.append(f'<polyline data-id="{el.id}" stroke="{PALETTE[el.cls]}" points="{_points_attr(pts)}"/>')
    out.append("</g>")

    out.append('<g id="uncertain-map" fill="none">')
    for u in uncertain_elements:
        pts = denormalize_from_bev(np.asarray(u.mu))
        opacity = band_opacity(u.delta_c_mean)
        if len(pts) >= 2 and opacity > 0:
            out.append(
                f'<polyline class="band" data-id="{u.id}" stroke="{BAND_COLOR}" stroke-width="{_f(BAND_WIDTH_PX)}" '
                f'stroke-opacity="{opacity:.4f}" stroke-linecap="round" points="{_points_attr(pts)}"/>'
            )
        color = PALETTE[ElementClass(u.cls)]
        if len(pts) >= 2:
            out.append(f'<polyline data-id="{u.id}" stroke="{color}" stroke-width="2" points="{_points_attr(pts)}"/>')
        for p, beta in zip(pts, np.asarray(u.beta)):
            r = ellipse_radius(beta)
            if r > 0:
                cx, cy = _xy(p)
                out.append(
                    f'<ellipse class="unc" data-id="{u.id}" cx="{_f(cx)}" cy="{_f(cy)}" rx="{r:.4f}" ry="{r:.4f}" '
                    f'stroke="{ELLIPSE_COLOR}" stroke-width="0.5"/>'
                )
    out.append("</g>")

    out.append('<g id="agents" fill="none">')
    for aid in sorted(agents):
        ag = agents[aid]
        out.append(f'<polyline class="history" data-agent="{aid}" stroke="#000000" stroke-width="1.5" points="{_points_attr(ag.history.samples)}"/>')
        ps = preds.get(aid)
        if ps is None:
            continue
        for k, (mode, score) in enumerate(zip(ps.modes, ps.scores)):
            line = np.vstack([ag.history.samples[-1:], mode])
            out.append(
                f'<polyline class="mode" data-agent="{aid}" data-mode="{k}" stroke="{MODE_COLOR}" stroke-width="1" '
                f'stroke-opacity="{max(float(score), 0.1):.4f}" points="{_points_attr(line)}"/>'
            )
    out.append("</g>")

    ex, ey = _xy((scene.ego_pose.x, scene.ego_pose.y))
    out.append(
        f'<rect id="ego" x="{_f(ex - 20)}" y="{_f(ey - 8)}" width="40.00" height="16.00" fill="{EGO_COLOR}" '
        f'transform="rotate({_f(-math.degrees(scene.ego_pose.heading))} {_f(ex)} {_f(ey)})"/>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"
