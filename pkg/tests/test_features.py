import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from scanhmer.corpus import Expression
from scanhmer.features import (
    FeatureError,
    RasterConfig,
    build_guider_map,
    build_masks,
    draw_stroke,
    extract_online_features,
    normalization_scale,
    normalize_traces,
    pad_online,
    pool_offline_masks,
    pool_online_masks,
    rasterize,
    rasterize_strokes,
)
from scanhmer.model import featurize


def expr(strokes, tokens=(), alignment=None):
    xy = np.vstack([np.asarray(s, dtype=float).reshape(-1, 2) for s in strokes])
    sid = np.concatenate([np.full(len(s), j) for j, s in enumerate(strokes)])
    return Expression(xy, sid, tokens, alignment)


def scanline_ink(p0, p1, radius, h, w):
    """Brute-force count of pixel centres within ``radius`` of a segment."""
    count = 0
    for r in range(h):
        for c in range(w):
            best = math.inf
            for k in range(1001):
                t = k / 1000
                x = p0[0] + t * (p1[0] - p0[0])
                y = p0[1] + t * (p1[1] - p0[1])
                best = min(best, math.hypot(c - x, r - y))
            count += best <= radius + 1e-9
    return count


# -- online features -----------------------------------------------------------

def test_single_point_row():
    f = extract_online_features(expr([[(0, 0)]]))
    np.testing.assert_array_equal(f, [[0, 0, 0, 0, 0, 0, 0, 1]])


def test_two_point_differences():
    f = extract_online_features(expr([[(0, 0), (3, 4)]]), normalize=False)
    np.testing.assert_array_equal(f[0], [0, 0, 3, 4, 0, 0, 1, 0])
    # normalized: height 4 -> scale 1/4
    g = extract_online_features(expr([[(0, 0), (3, 4)]]))
    np.testing.assert_allclose(g[0, 2:4], [0.75, 1.0])


def test_second_difference():
    f = extract_online_features(expr([[(0, 0), (1, 0), (2, 0)]]))
    assert f[0, 4] == 2.0
    np.testing.assert_array_equal(f[1, 4:6], [0, 0])


def test_differences_cross_stroke_boundaries():
    f = extract_online_features(expr([[(0, 0)], [(5, 0)]]), normalize=False)
    assert f[0, 2] == 5.0
    np.testing.assert_array_equal(f[:, 6:], [[0, 1], [0, 1]])


def test_pad_online_appends_pen_up():
    f = extract_online_features(expr([[(0, 0), (1, 1), (2, 0)]]))
    p = pad_online(f, 4)
    assert p.shape == (4, 8)
    np.testing.assert_array_equal(p[3], [0, 0, 0, 0, 0, 0, 0, 1])
    assert pad_online(p, 4) is p


# -- normalization --------------------------------------------------------------

def test_scale_ignores_short_strokes():
    e = expr([[(0, 0), (0, 10)], [(1, 0), (1, 0.5)]])
    assert normalization_scale(e) == pytest.approx(0.1)


def test_scale_single_stroke():
    assert normalization_scale(expr([[(0, 0), (1, 2)]])) == pytest.approx(0.5)


def test_flat_strokes_keep_scale():
    e = expr([[(3, 1), (5, 1)], [(6, 2), (9, 2)]])
    assert normalization_scale(e) == 1.0
    n = normalize_traces(e)
    np.testing.assert_allclose(n.xy, e.xy - e.xy.min(axis=0))


# -- rasterization --------------------------------------------------------------

def test_unit_segment_inks_17_pixels():
    canvas = np.zeros((5, 24), dtype=bool)
    p0, p1 = np.array([2.0, 2.0]), np.array([18.0, 2.0])
    draw_stroke(canvas, np.array([p0, p1]), 1.0)
    assert canvas.sum() == 17
    assert canvas.sum() == scanline_ink(p0, p1, 0.5, 5, 24)
    assert canvas[2].sum() == 17


def test_rasterize_unit_segment():
    e = normalize_traces(expr([[(0, 0), (1, 0)]]))
    img = rasterize(e, RasterConfig(unit_pixels=16, thickness=1, pad=8), factor=8)
    assert img.sum() == 17
    assert img.shape[0] % 8 == 0 and img.shape[1] % 8 == 0
    assert set(np.unique(img)) <= {0.0, 1.0}


def test_single_point_disk():
    e = normalize_traces(expr([[(0, 0)]]))
    assert rasterize(e, RasterConfig(thickness=1), 8).sum() == 1
    # radius 1.5 covers the centre, 4 edge and 4 corner neighbours
    assert rasterize(e, RasterConfig(thickness=3), 8).sum() == 9


def test_raster_too_large():
    e = expr([[(0, 0), (0, 1), (500, 1)]])
    with pytest.raises(FeatureError):
        rasterize(normalize_traces(e), RasterConfig(max_side=256))


def test_ink_present(nested):
    assert rasterize(normalize_traces(nested)).sum() > 0


# -- masks -----------------------------------------------------------------

def test_pooled_online_full_window():
    on = np.array([[1, 1, 0, 0], [0, 0, 1, 1]], dtype=bool)
    np.testing.assert_array_equal(pool_online_masks(on, 2)[0], [1, 0])


def test_pooled_online_partial_window():
    on = np.array([[1, 1, 1, 0], [0, 0, 0, 1]], dtype=bool)
    np.testing.assert_array_equal(pool_online_masks(on, 2)[0], [1, 0.5])


def test_one_pixel_stroke_is_not_snapped():
    off = np.zeros((1, 16, 16), dtype=bool)
    off[0, 9, 3] = True
    pooled = pool_offline_masks(off, 8)
    assert pooled[0, 1, 0] == pytest.approx(1 / 64)
    assert np.count_nonzero(pooled) == 1


def test_pool_divisibility():
    with pytest.raises(FeatureError):
        pool_online_masks(np.ones((1, 6), dtype=bool), 4)


def test_build_masks_divisibility(nested):
    e = normalize_traces(nested)
    strokes = rasterize_strokes(e)
    with pytest.raises(FeatureError):
        build_masks(e, strokes, 1, 1, 1)


# -- guider map -------------------------------------------------------------

def test_guider_uniform_over_aligned_strokes(vocab):
    e = expr([[(0, 0)], [(1, 0)], [(1, 1)], [(2, 0)]], ("x", "+", "y"), {0: {0}, 1: {1, 2}, 2: {3}})
    g = build_guider_map(e, vocab)
    np.testing.assert_array_equal(g.gamma[1], [0, 0.5, 0.5, 0])
    assert g.valid.tolist() == [True, True, True]


def test_structural_token_is_unguided(vocab):
    e = expr([[(0, 0)], [(1, 0)]], ("{", "x", "}"), {0: {0}, 1: {1}})
    g = build_guider_map(e, vocab)
    assert g.valid.tolist() == [False, True, False]
    np.testing.assert_array_equal(g.gamma[0], 0)


def test_unaligned_expression_is_unguided(vocab):
    g = build_guider_map(expr([[(0, 0)]], ("x",)), vocab)
    assert not g.valid.any()


def test_near_flat_expression_hits_raster_bound():
    e = expr([[(0.0, 0.0), (1.0, 4.5e-205)]])
    with pytest.raises(FeatureError, match="max_side"):
        rasterize(normalize_traces(e), RasterConfig(), 8)


# -- properties -------------------------------------------------------------

@st.composite
def stroke_lists(draw):
    sizes = draw(st.lists(st.integers(1, 6), min_size=1, max_size=5))
    pts = st.tuples(st.floats(0, 5, allow_nan=False), st.floats(0, 5, allow_nan=False))
    return [draw(st.lists(pts, min_size=k, max_size=k)) for k in sizes]


@settings(max_examples=40, deadline=None)
@given(stroke_lists())
def test_mask_invariants(strokes):
    from scanhmer.synth import synthetic_vocab

    e = expr(strokes)
    try:
        s = featurize(e, synthetic_vocab())
    except FeatureError:
        assume(False)  # extreme aspect ratio; the raster bound is tested separately
    m, n = e.num_strokes, e.num_points
    assert s.masks.online.shape == (m, n)
    np.testing.assert_array_equal(s.masks.online.sum(axis=0), np.ones(n))
    assert np.all(s.masks.online.sum(axis=1) >= 1)
    # pooled online masks partition every full window; the padded tail keeps its point share
    col = s.masks.pooled_online.sum(axis=0)
    L = col.shape[0]
    np.testing.assert_allclose(col[: n // 4], 1.0)
    if n % 4:
        assert col[-1] == pytest.approx((n % 4) / 4)
    for pooled, cap in ((s.masks.pooled_online, L), (s.masks.pooled_offline, s.masks.pooled_offline[0].size)):
        norms = pooled.reshape(m, -1).sum(axis=1)
        assert np.all(norms > 0) and np.all(norms <= cap)
        assert pooled.min() >= 0 and pooled.max() <= 1
    np.testing.assert_array_equal(s.masks.offline.any(axis=0), s.image > 0)
    flags = s.online[:, 6:]
    np.testing.assert_array_equal(flags.sum(axis=1), 1)
    assert np.isfinite(s.online).all()


@settings(max_examples=40, deadline=None)
@given(stroke_lists(), st.floats(-50, 50), st.floats(-50, 50))
def test_translation(strokes, dx, dy):
    e = expr(strokes)
    moved = e.with_xy(e.xy + [dx, dy])
    raw, raw_moved = extract_online_features(e, False), extract_online_features(moved, False)
    np.testing.assert_allclose(raw_moved[:, :2], raw[:, :2] + [dx, dy], atol=1e-9)
    np.testing.assert_allclose(raw_moved[:, 2:], raw[:, 2:], atol=1e-9)
    np.testing.assert_allclose(extract_online_features(moved), extract_online_features(e), atol=1e-6)
    f = extract_online_features(e)
    np.testing.assert_allclose(f[:, :2].min(axis=0), 0, atol=1e-12)


def test_snap_rule_restores_zero_mask():
    from scanhmer.features import _snap

    pooled = np.array([[0.0, 0.0, 0.0], [0.2, 0.0, 0.5]])
    overlap = np.array([[1e-9, 3e-9, 0.0], [0.0, 0.0, 0.0]])
    out = _snap(pooled, overlap)
    np.testing.assert_array_equal(out[0], [0, 1, 0])
    np.testing.assert_array_equal(out[1], pooled[1])
