"""Attention visualization: one SVG per decoded token, strokes shaded by their alpha."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .corpus import Expression
from .features import StrokeMaskSet

INK = "#c8c8c8"
HOT = "#d62728"
PANEL = 240.0
MARGIN = 12.0


def stroke_alphas(alpha: Sequence[float], num_strokes: int, pooled: np.ndarray | None = None) -> np.ndarray:
    """Per-stroke attention mass.

    Stroke-level alphas are returned as is.  Point- or pixel-level alphas
    (baselines) are distributed over strokes by each cell's share of the
    pooled stroke masks; cells covered by no stroke are dropped.
    """
    a = np.asarray(alpha, dtype=np.float64).reshape(-1)
    if pooled is None:
        if len(a) != num_strokes:
            raise ValueError(f"{len(a)} alphas for {num_strokes} strokes")
        return a
    w = np.asarray(pooled, dtype=np.float64).reshape(num_strokes, -1)
    col = w.sum(axis=0)
    share = np.divide(w, col, out=np.zeros_like(w), where=col > 0)
    return share @ a


def _panel(e: Expression, weights: np.ndarray, x_off: float, title: str | None) -> list[str]:
    xy = e.xy
    lo = xy.min(axis=0)
    span = float(max((xy.max(axis=0) - lo).max(), 1e-9))
    scale = (PANEL - 2 * MARGIN) / span
    out = []
    if title:
        out.append(f'<text x="{x_off + PANEL / 2:.1f}" y="14" font-size="12" text-anchor="middle">{escape(title)}</text>')
    for j, pts in enumerate(e.strokes()):
        p = (pts - lo) * scale + MARGIN
        coords = " ".join(f"{x_off + x:.2f},{y + 20:.2f}" for x, y in p)
        if len(p) == 1:
            coords += f" {x_off + p[0][0] + 0.5:.2f},{p[0][1] + 20:.2f}"
        out.append(f'<polyline points="{coords}" fill="none" stroke="{INK}" stroke-width="3" stroke-linecap="round"/>')
        out.append(
            f'<polyline class="attn" data-stroke="{j}" data-alpha="{weights[j]:.6f}" points="{coords}" fill="none" '
            f'stroke="{HOT}" stroke-opacity="{weights[j]:.6f}" stroke-width="3" stroke-linecap="round"/>'
        )
    return out


def render_step(e: Expression, record: dict, masks: StrokeMaskSet | None = None) -> str:
    """SVG for one alpha-record; fusion records draw online and offline panels side by side."""
    m = e.num_strokes
    mode = record.get("mode", "")
    if "alpha_on" in record:
        panels = [("online", stroke_alphas(record["alpha_on"], m)), ("offline", stroke_alphas(record["alpha_off"], m))]
    else:
        pooled = None
        if mode == "point":
            pooled = masks.pooled_online if masks is not None else None
        elif mode == "pixel":
            pooled = masks.pooled_offline if masks is not None else None
        if mode in ("point", "pixel") and pooled is None:
            raise ValueError(f"{mode} records need stroke masks to map alphas onto strokes")
        panels = [(None, stroke_alphas(record["alpha"], m, pooled))]
    width = PANEL * len(panels)
    height = PANEL + 44
    body = []
    for i, (title, w) in enumerate(panels):
        body += _panel(e, w, i * PANEL, title)
    caption = escape(str(record.get("token", "")))
    body.append(f'<text x="{width / 2:.1f}" y="{height - 8:.1f}" font-size="16" text-anchor="middle" '
                f'font-family="monospace">{caption}</text>')
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
            f'viewBox="0 0 {width:.0f} {height:.0f}" data-step="{record.get("step", 0)}">')
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', *body, "</svg>"]) + "\n"


def write_svgs(e: Expression, records: Sequence[dict], out_dir, masks: StrokeMaskSet | None = None,
               eos: str = "<eos>") -> list[Path]:
    """One ``step_NNN.svg`` per output token (the closing eos is not drawn)."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for rec in records:
        if rec.get("token") == eos:
            continue
        p = d / f"step_{int(rec['step']):03d}.svg"
        p.write_text(render_step(e, rec, masks), encoding="utf-8")
        paths.append(p)
    return paths
