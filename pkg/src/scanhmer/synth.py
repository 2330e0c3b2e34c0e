"""Synthetic handwriting: polyline glyphs laid out into expressions with exact alignment.

Glyphs live in a unit box with y pointing up; the renderer lays out
fractions, radicals and scripts, then flips y so the result follows the
ink convention (y down) used everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import EOS, SOS, Expression, Vocabulary, serialize_native


def _arc(cx, cy, rx, ry, a0, a1, n=10):
    t = np.radians(np.linspace(a0, a1, n))
    return [(cx + rx * np.cos(a), cy + ry * np.sin(a)) for a in t]


# each glyph: list of strokes, each stroke a list of (x, y) in [0, 0.6] x [0, 1]
GLYPHS: dict[str, list[list[tuple[float, float]]]] = {
    "0": [_arc(0.3, 0.5, 0.28, 0.5, 90, 450, 14)],
    "1": [[(0.12, 0.8), (0.32, 1.0), (0.32, 0.0)]],
    "2": [_arc(0.3, 0.7, 0.27, 0.28, 160, -30, 7) + [(0.02, 0.0), (0.6, 0.0)]],
    "3": [_arc(0.28, 0.75, 0.25, 0.25, 150, -90, 7) + _arc(0.28, 0.25, 0.3, 0.25, 90, -150, 7)[1:]],
    "4": [[(0.45, 1.0), (0.0, 0.3), (0.6, 0.3)], [(0.45, 0.7), (0.45, 0.0)]],
    "5": [[(0.55, 1.0), (0.05, 1.0), (0.05, 0.6)] + _arc(0.28, 0.32, 0.3, 0.32, 110, -160, 7)],
    "6": [[(0.5, 1.0), (0.2, 0.7)] + _arc(0.3, 0.3, 0.28, 0.3, 160, -200, 11)],
    "7": [[(0.0, 1.0), (0.6, 1.0), (0.2, 0.0)]],
    "8": [_arc(0.3, 0.75, 0.22, 0.25, -90, 270, 9) + _arc(0.3, 0.25, 0.28, 0.25, 90, -270, 9)[1:]],
    "9": [_arc(0.3, 0.7, 0.26, 0.28, 0, 360, 11) + [(0.56, 0.4), (0.45, 0.0)]],
    "a": [_arc(0.28, 0.3, 0.26, 0.3, 60, 380, 10) + [(0.55, 0.0)]],
    "b": [[(0.05, 1.0), (0.05, 0.0)], _arc(0.3, 0.3, 0.25, 0.3, 170, -180, 9)],
    "c": [_arc(0.35, 0.3, 0.3, 0.3, 40, 320, 9)],
    "n": [[(0.05, 0.6), (0.05, 0.0)], [(0.05, 0.35)] + _arc(0.3, 0.35, 0.25, 0.25, 160, 0, 6) + [(0.55, 0.0)]],
    "x": [[(0.0, 0.6), (0.6, 0.0)], [(0.6, 0.6), (0.0, 0.0)]],
    "y": [[(0.0, 0.6), (0.3, 0.15)], [(0.6, 0.6), (0.15, -0.4)]],
    "+": [[(0.0, 0.5), (0.6, 0.5)], [(0.3, 0.2), (0.3, 0.8)]],
    "-": [[(0.0, 0.5), (0.6, 0.5)]],
    "=": [[(0.0, 0.65), (0.6, 0.65)], [(0.0, 0.35), (0.6, 0.35)]],
    "(": [_arc(0.5, 0.5, 0.35, 0.6, 120, 240, 7)],
    ")": [_arc(0.1, 0.5, 0.35, 0.6, 60, -60, 7)],
}

SYMBOLS = tuple(GLYPHS)
STRUCTURAL = ("{", "}", "^", "_", r"\frac", r"\sqrt")
VOCAB_TOKENS = (SOS, EOS) + SYMBOLS + STRUCTURAL
NESTED_LABEL = r"\frac { 9 } { 9 + \sqrt { 9 } }"


def synthetic_vocab() -> Vocabulary:
    return Vocabulary(list(VOCAB_TOKENS), STRUCTURAL)


# -- layout tree ------------------------------------------------------------

@dataclass
class Node:
    kind: str                 # sym | frac | sqrt | sup | sub
    pos: int                  # token position of the symbol / command / script marker
    token: str = ""
    children: list = field(default_factory=list)   # list of groups (lists of Node)


class LayoutError(ValueError):
    pass


def parse_layout(tokens: Sequence[str]) -> list[Node]:
    """Tokens -> list of nodes.  Scripts require braces: ``x ^ { 2 }``."""
    tokens = list(tokens)

    def group(i: int) -> tuple[list[Node], int]:
        if i >= len(tokens) or tokens[i] != "{":
            raise LayoutError(f"expected '{{' at position {i}")
        body, i = seq(i + 1, closing=True)
        return body, i + 1

    def seq(i: int, closing: bool) -> tuple[list[Node], int]:
        out: list[Node] = []
        while i < len(tokens):
            t = tokens[i]
            if t == "}":
                if not closing:
                    raise LayoutError(f"unbalanced '}}' at position {i}")
                return out, i
            if t == r"\frac":
                num, j = group(i + 1)
                den, j = group(j)
                out.append(Node("frac", i, children=[num, den]))
                i = j
            elif t == r"\sqrt":
                body, j = group(i + 1)
                out.append(Node("sqrt", i, children=[body]))
                i = j
            elif t in ("^", "_"):
                if not out:
                    raise LayoutError(f"script without base at position {i}")
                body, j = group(i + 1)
                out.append(Node("sup" if t == "^" else "sub", i, children=[body]))
                i = j
            elif t in GLYPHS:
                out.append(Node("sym", i, token=t))
                i += 1
            else:
                raise LayoutError(f"no glyph for token {t!r}")
        if closing:
            raise LayoutError("missing '}'")
        return out, i

    nodes, _ = seq(0, closing=False)
    return nodes


# -- rendering --------------------------------------------------------------

@dataclass
class Box:
    strokes: list[tuple[int, np.ndarray]]     # (token position, (n, 2) points, y up)
    x0: float
    x1: float
    y0: float
    y1: float

    def shifted(self, dx: float, dy: float) -> "Box":
        return Box([(p, s + (dx, dy)) for p, s in self.strokes], self.x0 + dx, self.x1 + dx, self.y0 + dy, self.y1 + dy)


def _box_of(strokes, fallback=(0.0, 0.6, 0.0, 1.0)) -> Box:
    if not strokes:
        return Box([], *fallback)
    pts = np.vstack([s for _, s in strokes])
    return Box(strokes, float(pts[:, 0].min()), float(pts[:, 0].max()), float(pts[:, 1].min()), float(pts[:, 1].max()))


GAP = 0.25


def _render_group(nodes: list[Node], scale: float) -> Box:
    strokes: list[tuple[int, np.ndarray]] = []
    x = 0.0
    last: Box | None = None
    for node in nodes:
        if node.kind in ("sup", "sub"):
            body = _render_group(node.children[0], scale * 0.6)
            base = last if last is not None else Box([], 0, 0, 0, scale)
            if node.kind == "sup":
                dy = base.y0 + 0.55 * (base.y1 - base.y0) - body.y0
            else:
                dy = base.y0 + 0.3 * (base.y1 - base.y0) - body.y1
            b = body.shifted(base.x1 + 0.1 * scale - body.x0, dy)
        else:
            b = _render_node(node, scale)
            b = b.shifted(x - b.x0, 0)
        strokes += b.strokes
        x = b.x1 + GAP * scale
        last = b if node.kind not in ("sup", "sub") else last
    return _box_of(strokes, (0.0, 0.6 * scale, 0.0, scale))


def _render_node(node: Node, scale: float) -> Box:
    if node.kind == "sym":
        return _box_of([(node.pos, np.array(s, dtype=float) * scale) for s in GLYPHS[node.token]])
    if node.kind == "frac":
        num = _render_group(node.children[0], scale * 0.8)
        den = _render_group(node.children[1], scale * 0.8)
        width = max(num.x1 - num.x0, den.x1 - den.x0) + 0.3 * scale
        mid = 0.5 * scale
        num = num.shifted((width - (num.x1 - num.x0)) / 2 - num.x0, mid + 0.15 * scale - num.y0)
        den = den.shifted((width - (den.x1 - den.x0)) / 2 - den.x0, mid - 0.15 * scale - den.y1)
        bar = np.array([(0.0, mid), (width / 2, mid), (width, mid)])
        return _box_of(num.strokes + [(node.pos, bar)] + den.strokes)
    if node.kind == "sqrt":
        body = _render_group(node.children[0], scale * 0.9)
        body = body.shifted(0.4 * scale - body.x0, 0.0)
        top = body.y1 + 0.12 * scale
        right = body.x1 + 0.1 * scale
        hook = np.array([(0.0, body.y0 + 0.35 * (top - body.y0)), (0.12 * scale, body.y0 + 0.45 * (top - body.y0)),
                         (0.22 * scale, body.y0 - 0.05 * scale), (0.32 * scale, top), (right, top)])
        return _box_of([(node.pos, hook)] + body.strokes)
    raise LayoutError(f"cannot render {node.kind}")


def _resample(poly: np.ndarray, spacing: float) -> np.ndarray:
    seg = np.hypot(*np.diff(poly, axis=0).T) if len(poly) > 1 else np.zeros(0)
    total = float(seg.sum())
    if total == 0.0:
        return poly[:1]
    n = max(2, int(np.ceil(total / spacing)) + 1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    t = np.linspace(0.0, total, n)
    return np.c_[np.interp(t, cum, poly[:, 0]), np.interp(t, cum, poly[:, 1])]


def render_expression(
    tokens: Sequence[str] | str,
    rng: np.random.Generator | None = None,
    jitter: float = 0.02,
    spacing: float = 0.12,
    height: float = 40.0,
    name: str = "",
) -> Expression:
    """Lay out ``tokens`` and return an aligned Expression in ink coordinates.

    ``jitter`` is per-point noise relative to a symbol height; ``height`` is
    the pixel height of a full-size symbol before normalization.
    """
    if isinstance(tokens, str):
        tokens = tokens.split()
    tokens = list(tokens)
    box = _render_group(parse_layout(tokens), 1.0)
    if not box.strokes:
        raise LayoutError("expression draws no ink")
    xy, sid, alignment = [], [], {}
    for j, (pos, pts) in enumerate(box.strokes):
        pts = _resample(pts, spacing)
        if rng is not None and jitter > 0:
            pts = pts + rng.normal(0.0, jitter, pts.shape)
        xy.append(pts)
        sid += [j] * len(pts)
        alignment.setdefault(pos, set()).add(j)
    xy = np.vstack(xy)
    xy[:, 1] = box.y1 - xy[:, 1]
    xy = np.round(xy * height, 2)
    return Expression(xy, sid, tokens, alignment, name)


def random_tokens(rng: np.random.Generator, max_symbols: int = 4, depth: int = 1) -> list[str]:
    """A random well-formed label of up to ``max_symbols`` top-level items."""
    letters = [s for s in SYMBOLS if s not in "()"]
    out: list[str] = []
    for _ in range(int(rng.integers(1, max_symbols + 1))):
        r = rng.random()
        if depth > 0 and r < 0.12:
            out += [r"\frac", "{"] + random_tokens(rng, 2, depth - 1) + ["}", "{"] + random_tokens(rng, 2, depth - 1) + ["}"]
        elif depth > 0 and r < 0.2:
            out += [r"\sqrt", "{"] + random_tokens(rng, 2, depth - 1) + ["}"]
        elif depth > 0 and r < 0.3 and out and out[-1] in letters:
            out += [str(rng.choice(["^", "_"])), "{", str(rng.choice(letters)), "}"]
        else:
            out.append(str(rng.choice(letters)))
    return out


def synthetic_corpus(n: int, seed: int = 0, max_symbols: int = 4, jitter: float = 0.02) -> list[Expression]:
    """``n`` distinct random expressions, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    seen: set[tuple[str, ...]] = set()
    out: list[Expression] = []
    while len(out) < n:
        toks = tuple(random_tokens(rng, max_symbols))
        if toks in seen:
            continue
        seen.add(toks)
        out.append(render_expression(toks, rng, jitter, name=f"synth{len(out):04d}"))
    return out


def write_corpus(directory, expressions: Sequence[Expression]) -> Path:
    """Write one native ``.txt`` file per expression into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, e in enumerate(expressions):
        (d / f"{e.name or f'expr{i:04d}'}.txt").write_text(serialize_native(e), encoding="utf-8")
    return d
