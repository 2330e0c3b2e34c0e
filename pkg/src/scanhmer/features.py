"""Online features, offline rasterization, stroke masks and guider maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import CorpusError, Expression, Vocabulary

PEN_DOWN = (1.0, 0.0)
PEN_UP = (0.0, 1.0)


class FeatureError(CorpusError):
    pass


@dataclass(frozen=True)
class RasterConfig:
    unit_pixels: float = 16.0
    thickness: float = 1.0
    pad: int = 8
    max_side: int = 2048


@dataclass
class StrokeMaskSet:
    online: np.ndarray          # (M, N) binary
    offline: np.ndarray         # (M, H_in, W_in) binary
    pooled_online: np.ndarray   # (M, L)
    pooled_offline: np.ndarray  # (M, H, W)

    @property
    def num_strokes(self) -> int:
        return self.online.shape[0]


@dataclass
class GuiderMap:
    gamma: np.ndarray  # (C, M)
    valid: np.ndarray  # (C,) bool

    def __len__(self) -> int:
        return len(self.valid)


def stroke_heights(e: Expression) -> np.ndarray:
    return np.array([s[:, 1].max() - s[:, 1].min() for s in e.strokes()])


def normalization_scale(e: Expression) -> float:
    """1 / average height of the strokes taller than a tenth of the tallest."""
    h = stroke_heights(e)
    h_max = float(h.max())
    if h_max <= 0.0:
        return 1.0
    tall = h[h > h_max / 10.0]
    avg = float(tall.mean()) if tall.size else h_max
    return 1.0 / avg


def normalize_traces(e: Expression) -> Expression:
    scale = normalization_scale(e)
    xy = e.xy * scale
    xy = xy - xy.min(axis=0)
    return e.with_xy(xy)


def extract_online_features(e: Expression, normalize: bool = True) -> np.ndarray:
    """(N, 8) rows ``[x, y, dx, dy, d2x, d2y, pen_down, pen_up]``.

    Differences use the global successors ``i+1`` and ``i+2`` (crossing
    stroke boundaries) and are zero past the end of the sequence.  The last
    point of every stroke carries the pen-up flag.
    """
    if normalize:
        e = normalize_traces(e)
    xy = e.xy
    n = len(xy)
    out = np.zeros((n, 8))
    out[:, :2] = xy
    if n > 1:
        out[:-1, 2:4] = xy[1:] - xy[:-1]
    if n > 2:
        out[:-2, 4:6] = xy[2:] - xy[:-2]
    last = np.ones(n, dtype=bool)
    last[:-1] = e.stroke_ids[1:] != e.stroke_ids[:-1]
    out[:, 6] = np.where(last, PEN_UP[0], PEN_DOWN[0])
    out[:, 7] = np.where(last, PEN_UP[1], PEN_DOWN[1])
    return out


def pad_online(features: np.ndarray, factor: int) -> np.ndarray:
    """Append pen-up zero rows until the length is a multiple of ``factor``."""
    n = len(features)
    extra = (-n) % factor
    if not extra:
        return features
    pad = np.zeros((extra, features.shape[1]))
    pad[:, 6:8] = PEN_UP
    return np.vstack([features, pad])


# -- rasterization -----------------------------------------------------------

def _segment_distance(rows: np.ndarray, cols: np.ndarray, p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
    """Distance from pixel centres (row, col) to the segment p0-p1 given as (x, y)."""
    px, py = cols, rows
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    den = dx * dx + dy * dy
    if den == 0.0:
        t = np.zeros_like(px, dtype=float)
    else:
        t = np.clip(((px - p0[0]) * dx + (py - p0[1]) * dy) / den, 0.0, 1.0)
    qx = p0[0] + t * dx
    qy = p0[1] + t * dy
    return np.hypot(px - qx, py - qy)


def draw_stroke(canvas: np.ndarray, pts: np.ndarray, thickness: float) -> None:
    """Mark every pixel whose centre lies within ``thickness/2`` of the polyline.

    ``pts`` holds (x, y) pixel coordinates; a single point draws a disk.
    """
    radius = thickness / 2.0
    H, W = canvas.shape
    segs = [(pts[0], pts[0])] if len(pts) == 1 else list(zip(pts[:-1], pts[1:]))
    for p0, p1 in segs:
        lo = np.floor(np.minimum(p0, p1) - radius).astype(int)
        hi = np.ceil(np.maximum(p0, p1) + radius).astype(int)
        c0, r0 = max(lo[0], 0), max(lo[1], 0)
        c1, r1 = min(hi[0], W - 1), min(hi[1], H - 1)
        if c0 > c1 or r0 > r1:
            continue
        rr, cc = np.mgrid[r0:r1 + 1, c0:c1 + 1]
        hit = _segment_distance(rr.astype(float), cc.astype(float), p0, p1) <= radius + 1e-9
        canvas[r0:r1 + 1, c0:c1 + 1] |= hit
    # the pixel nearest each vertex is always inked, so tiny strokes never vanish
    near = np.rint(pts).astype(int)
    inside = (near[:, 0] >= 0) & (near[:, 0] < W) & (near[:, 1] >= 0) & (near[:, 1] < H)
    canvas[near[inside, 1], near[inside, 0]] = True


def raster_geometry(e: Expression, cfg: RasterConfig, factor: int) -> tuple[np.ndarray, int, int]:
    """Pixel coordinates of the points and the padded image size."""
    pix = e.xy * cfg.unit_pixels + cfg.pad
    extent = np.ceil(e.xy.max(axis=0) * cfg.unit_pixels) + 1 + 2 * cfg.pad
    # check before the int cast: near-flat inputs normalize to astronomically wide rasters
    if not np.all(np.isfinite(extent)) or extent.max() > cfg.max_side:
        raise FeatureError(f"raster extent {extent.tolist()} exceeds max_side {cfg.max_side}")
    w, h = int(extent[0]), int(extent[1])
    w += (-w) % factor
    h += (-h) % factor
    if max(w, h) > cfg.max_side:
        raise FeatureError(f"raster {h}x{w} exceeds max_side {cfg.max_side}")
    return pix, h, w


def rasterize_strokes(e: Expression, cfg: RasterConfig = RasterConfig(), factor: int = 8) -> np.ndarray:
    """Per-stroke binary masks (M, H_in, W_in) of a normalized expression."""
    pix, h, w = raster_geometry(e, cfg, factor)
    masks = np.zeros((e.num_strokes, h, w), dtype=bool)
    bounds = np.flatnonzero(np.diff(e.stroke_ids)) + 1
    for j, pts in enumerate(np.split(pix, bounds)):
        draw_stroke(masks[j], pts, cfg.thickness)
    return masks


def rasterize(e: Expression, cfg: RasterConfig = RasterConfig(), factor: int = 8) -> np.ndarray:
    """Offline image in [0, 1]: ink 1, background 0."""
    return rasterize_strokes(e, cfg, factor).any(axis=0).astype(np.float64)


# -- masks -------------------------------------------------------------------

def _snap(pooled: np.ndarray, overlap: np.ndarray) -> np.ndarray:
    """Give an all-zero pooled mask weight 1 at its largest-overlap cell."""
    pooled = pooled.copy()
    for j in range(len(pooled)):
        if pooled[j].sum() <= 0.0:
            flat = pooled[j].reshape(-1)
            flat[np.argmax(overlap[j].reshape(-1))] = 1.0
    return pooled


def pool_online_masks(mask_on: np.ndarray, factor: int) -> np.ndarray:
    m, n = mask_on.shape
    if n % factor:
        raise FeatureError(f"online length {n} not divisible by factor {factor}")
    windows = mask_on.reshape(m, n // factor, factor).astype(np.float64)
    return _snap(windows.mean(axis=2), windows.sum(axis=2))


def pool_offline_masks(mask_off: np.ndarray, factor: int) -> np.ndarray:
    m, hi, wi = mask_off.shape
    if hi % factor or wi % factor:
        raise FeatureError(f"image {hi}x{wi} not divisible by factor {factor}")
    windows = mask_off.reshape(m, hi // factor, factor, wi // factor, factor).astype(np.float64)
    return _snap(windows.mean(axis=(2, 4)), windows.sum(axis=(2, 4)))


def build_masks(
    e: Expression,
    stroke_pixels: np.ndarray,
    length: int,
    height: int,
    width: int,
    online_factor: int = 4,
) -> StrokeMaskSet:
    """Binary and pooled stroke masks.

    ``stroke_pixels`` are the per-stroke raster masks from
    ``rasterize_strokes``; ``length`` (L), ``height`` and ``width`` (H, W)
    are the encoder output sizes.  When the point sequence was padded to
    ``online_factor * L``, the padding columns belong to no stroke.
    """
    m, n = e.num_strokes, e.num_points
    n_pad = length * online_factor
    if length <= 0 or not n <= n_pad < n + online_factor:
        raise FeatureError(f"{n} points cannot be pooled to length {length} by factor {online_factor}")
    hi, wi = stroke_pixels.shape[1:]
    if height <= 0 or width <= 0 or hi % height or wi % width or hi // height != wi // width:
        raise FeatureError(f"image {hi}x{wi} does not pool to {height}x{width} with one factor")
    on = np.zeros((m, n_pad), dtype=bool)
    on[e.stroke_ids, np.arange(n)] = True
    pooled_on = pool_online_masks(on, online_factor)
    pooled_off = pool_offline_masks(stroke_pixels, hi // height)
    return StrokeMaskSet(on[:, :n], stroke_pixels.astype(bool), pooled_on, pooled_off)


def build_guider_map(e: Expression, vocab: Vocabulary | None = None) -> GuiderMap:
    """Oracle attention: uniform over the strokes of each aligned, non-structural token."""
    c, m = len(e.tokens), e.num_strokes
    gamma = np.zeros((c, m))
    valid = np.zeros(c, dtype=bool)
    structural = vocab.structural if vocab is not None else frozenset()
    for pos, strokes in (e.alignment or {}).items():
        if any(s >= m for s in strokes):
            raise FeatureError(f"alignment references stroke >= {m}")
        if not strokes or e.tokens[pos] in structural:
            continue
        gamma[pos, sorted(strokes)] = 1.0 / len(strokes)
        valid[pos] = True
    return GuiderMap(gamma, valid)
