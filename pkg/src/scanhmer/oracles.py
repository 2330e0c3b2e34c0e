"""Independent scalar-loop reference implementations.

These deliberately avoid the tensor library and vectorized numpy so they
can serve as test oracles for pooling, attention, the guider and the
teacher-forced objective.  Parameters are read straight from module
``.data`` arrays.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np


def _mv(x, w):
    """Row vector times matrix: (n,) @ (n, m) with explicit loops."""
    n, m = len(w), len(w[0])
    return [sum(x[i] * w[i][j] for i in range(n)) for j in range(m)]


def _sigmoid(v: float) -> float:
    return 1.0 / (1.0 + math.exp(-v)) if v >= 0 else math.exp(v) / (1.0 + math.exp(v))


def _softmax(e: Sequence[float]) -> list[float]:
    mx = max(e)
    ex = [math.exp(v - mx) for v in e]
    s = sum(ex)
    return [v / s for v in ex]


def pool_strokes(features, pooled_masks) -> np.ndarray:
    """s_j[d] = sum_t pmask_j[t] f[t, d] / sum_t pmask_j[t]."""
    f = np.asarray(features, dtype=np.float64)
    masks = np.asarray(pooled_masks, dtype=np.float64).reshape(len(pooled_masks), -1)
    T, D = f.shape
    out = np.zeros((len(masks), D))
    for j, m in enumerate(masks):
        norm = 0.0
        for t in range(T):
            norm += m[t]
        for d in range(D):
            acc = 0.0
            for t in range(T):
                acc += m[t] * f[t, d]
            out[j, d] = acc / norm
    return out


def coverage_1d(past, q) -> list[list[float]]:
    """(T,) -> (T, C): same-padded cross-correlation with kernels q (C, 1, k)."""
    C, _, k = q.shape
    T, pad = len(past), k // 2
    out = [[0.0] * C for _ in range(T)]
    for t in range(T):
        for c in range(C):
            acc = 0.0
            for i in range(k):
                s = t + i - pad
                if 0 <= s < T:
                    acc += q[c, 0, i] * past[s]
            out[t][c] = acc
    return out


def coverage_2d(past, q, h: int, w: int) -> list[list[float]]:
    """(h*w,) row-major -> (h*w, C) with kernels q (C, 1, kh, kw)."""
    C, _, kh, kw = q.shape
    ph, pw = kh // 2, kw // 2
    out = [[0.0] * C for _ in range(h * w)]
    for r in range(h):
        for col in range(w):
            for c in range(C):
                acc = 0.0
                for i in range(kh):
                    for j in range(kw):
                        rr, cc = r + i - ph, col + j - pw
                        if 0 <= rr < h and 0 <= cc < w:
                            acc += q[c, 0, i, j] * past[rr * w + cc]
                out[r * w + col][c] = acc
    return out


def attend(att, h_hat, feats, past, geometry=None, extra=None):
    """Coverage attention with parameters taken from a ``CoverageAttention``."""
    feats = np.asarray(feats, dtype=np.float64)
    T, D = feats.shape
    w_att, u_att, u_f, nu = (np.asarray(p.data, dtype=np.float64) for p in (att.w_att, att.u_att, att.u_f, att.nu))
    q = np.asarray(att.q.w.data, dtype=np.float64)
    query = _mv(list(h_hat), w_att)
    if extra is not None:
        query = [a + b for a, b in zip(query, extra)]
    cov = coverage_2d(past, q, *geometry) if geometry is not None and q.ndim == 4 else coverage_1d(past, q)
    A = len(nu)
    energy = []
    for t in range(T):
        s_proj = _mv(list(feats[t]), u_att)
        f_proj = _mv(cov[t], u_f)
        e = 0.0
        for a in range(A):
            e += nu[a] * math.tanh(query[a] + s_proj[a] + f_proj[a])
        energy.append(e)
    alpha = _softmax(energy)
    ctx = [sum(alpha[t] * feats[t, d] for t in range(T)) for d in range(D)]
    return np.array(ctx), np.array(alpha)


def reattend(dec, h_hat, s_on, s_off, past_on, past_off):
    """Pre-attention per modality, fine attention conditioned on the other, fused context."""
    c_hat_on, _ = attend(dec.att_on, h_hat, s_on, past_on)
    c_hat_off, _ = attend(dec.att_off, h_hat, s_off, past_off)
    extra_on = _mv(list(c_hat_off), np.asarray(dec.u_p_off.data, dtype=np.float64))
    extra_off = _mv(list(c_hat_on), np.asarray(dec.u_p_on.data, dtype=np.float64))
    c_on, a_on = attend(dec.att_on, h_hat, s_on, past_on, extra=extra_on)
    c_off, a_off = attend(dec.att_off, h_hat, s_off, past_off, extra=extra_off)
    cat = list(c_on) + list(c_off)
    fused = [math.tanh(v) for v in _mv(cat, np.asarray(dec.w_fc.w.data, dtype=np.float64))]
    return np.array(fused), [a_on, a_off]


def guider(alpha: Sequence[float], gamma: Sequence[float]) -> float:
    """G = -sum_j gamma_j log alpha_j, log clamped at 1e-12."""
    total = 0.0
    for a, g in zip(alpha, gamma):
        if g:
            total -= g * math.log(max(a, 1e-12))
    return total


def _linear(x, lin):
    y = _mv(list(x), np.asarray(lin.w.data, dtype=np.float64))
    if hasattr(lin, "b"):
        y = [v + b for v, b in zip(y, lin.b.data)]
    return y


def gru(cell, x, h):
    H = cell.hidden
    xw = [v + b for v, b in zip(_mv(list(x), np.asarray(cell.w_x.data, dtype=np.float64)), cell.b_x.data)]
    hu = _mv(list(h), np.asarray(cell.u_zr.data, dtype=np.float64))
    z = [_sigmoid(xw[i] + hu[i]) for i in range(H)]
    r = [_sigmoid(xw[H + i] + hu[H + i]) for i in range(H)]
    rh = _mv([r[i] * h[i] for i in range(H)], np.asarray(cell.u_h.data, dtype=np.float64))
    cand = [math.tanh(xw[2 * H + i] + rh[i]) for i in range(H)]
    return [(1 - z[i]) * h[i] + z[i] * cand[i] for i in range(H)]


def decoder_objective(dec, feats: Sequence[np.ndarray], targets: Sequence[int], gamma, valid, lam: float,
                      sos: int, eos: int, geometry=None, use_guider: bool = True) -> tuple[float, float, float]:
    """(O, CE, sum G) for a decoder given fixed encoder features."""
    feats = [np.asarray(f, dtype=np.float64) for f in feats]
    T = feats[0].shape[0]
    means = []
    for f in feats:
        means += [sum(f[t, d] for t in range(T)) / T for d in range(f.shape[1])]
    h = [math.tanh(v) for v in _linear(means, dec.init)]
    past = [[0.0] * T for _ in feats]
    embed = np.asarray(dec.embed.data, dtype=np.float64)
    ce = g_sum = 0.0
    prev = sos
    seq = list(targets) + [eos]
    for t, y in enumerate(seq):
        emb = list(embed[prev])
        h_hat = gru(dec.gru1, emb, h)
        if len(feats) == 2:
            ctx, alphas = reattend(dec, h_hat, feats[0], feats[1], past[0], past[1])
        else:
            ctx, a = attend(dec.att, h_hat, feats[0], past[0], geometry)
            alphas = [a]
        h = gru(dec.gru2, list(ctx), h_hat)
        pre = [e + a + b for e, a, b in zip(emb, _linear(h, dec.w_h), _linear(ctx, dec.w_c))]
        mo = [max(pre[2 * i], pre[2 * i + 1]) for i in range(len(pre) // 2)]
        logits = _linear(mo, dec.w_o)
        mx = max(logits)
        lse = mx + math.log(sum(math.exp(v - mx) for v in logits))
        ce += lse - logits[y]
        if use_guider and t < len(targets) and valid[t]:
            for a in alphas:
                g_sum += guider(a, gamma[t])
        for m, a in enumerate(alphas):
            past[m] = [p + v for p, v in zip(past[m], a)]
        prev = y
    return ce + lam * g_sum, ce, g_sum
