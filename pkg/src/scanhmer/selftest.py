"""Correctness checks shared by the ``selftest`` command and the acceptance tests."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import diffcore as dc
from . import oracles
from .config import MODES, DecoderCfg, get_preset
from .decoder import CoverageAttention, Decoder, guider_loss
from .diffcore import Tensor
from .encoders import pool_strokes
from .inference import TableModel, beam_search, exhaustive_best, greedy
from .model import ScanModel, featurize
from .nn import BiGRU, Conv, DenseBlock, DenseBlockCfg, GRUCell, Linear, Transition, maxout
from .synth import render_expression, synthetic_vocab


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    t0 = time.perf_counter()
    ok, detail = fn()
    return CheckResult(name, bool(ok), detail, time.perf_counter() - t0)


# -- gradients ---------------------------------------------------------------

def _leaf(rng, *shape, positive=False, away_from_zero=False):
    x = rng.normal(size=shape)
    if positive:
        x = np.abs(x) + 0.5
    if away_from_zero:
        x = np.sign(x) * (np.abs(x) + 0.1)
    return Tensor(x, requires_grad=True, dtype=np.float64)


def primitive_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    """name -> (scalar loss closure, leaves) for every primitive and netblock."""
    cases = {}

    def add(name, build, leaves):
        probe = build()
        w = Tensor(rng.normal(size=probe.shape), dtype=np.float64)
        cases[name] = ((lambda: (build() * w).sum()) if probe.ndim else build, leaves)

    a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    add("add", lambda: a + b, [a, b])
    add("sub", lambda: a - b, [a, b])
    add("mul", lambda: a * b, [a, b])
    bias = _leaf(rng, 4)
    add("add_bias", lambda: a + bias, [a, bias])
    add("exp", lambda: a.exp(), [a])
    p = _leaf(rng, 3, 4, positive=True)
    add("log", lambda: p.log(), [p])
    add("tanh", lambda: a.tanh(), [a])
    add("sigmoid", lambda: a.sigmoid(), [a])
    r = _leaf(rng, 3, 4, away_from_zero=True)
    add("relu", lambda: r.relu(), [r])
    v = _leaf(rng, 5)
    add("softmax", lambda: v.softmax(), [v])
    add("log_softmax", lambda: v.log_softmax(), [v])
    m1, m2, m3 = _leaf(rng, 3, 4), _leaf(rng, 4, 2), _leaf(rng, 4)
    add("matmul_2d", lambda: m1 @ m2, [m1, m2])
    add("matmul_vec_mat", lambda: m3 @ m2, [m3, m2])
    add("matmul_mat_vec", lambda: m1 @ m3, [m1, m3])
    add("transpose", lambda: a.T, [a])
    add("reshape", lambda: a.reshape(6, 2), [a])
    add("index", lambda: a[1:, ::2], [a])
    add("concat", lambda: dc.concat([a, b], axis=1), [a, b])
    add("stack", lambda: dc.stack([a, b], axis=0), [a, b])
    add("sum_axis", lambda: a.sum(axis=0), [a])
    add("mean", lambda: a.mean(axis=1), [a])
    d = Tensor(np.arange(12.0).reshape(3, 4) * 0.37 % 1.3, requires_grad=True, dtype=np.float64)
    add("max", lambda: d.max(axis=1), [d])
    table = _leaf(rng, 5, 3)
    add("embedding", lambda: dc.embedding(table, 2), [table])
    x1, w1, b1 = _leaf(rng, 2, 7), _leaf(rng, 3, 2, 3), _leaf(rng, 3)
    add("conv1d", lambda: dc.conv1d(x1, w1, b1), [x1, w1, b1])
    x2, w2, b2 = _leaf(rng, 2, 5, 6), _leaf(rng, 3, 2, 3, 3), _leaf(rng, 3)
    add("conv2d", lambda: dc.conv2d(x2, w2, b2), [x2, w2, b2])
    add("avgpool_1d", lambda: dc.avgpool(x1[:, :6], (2,)), [x1])
    add("avgpool_2d", lambda: dc.avgpool(x2[:, :4, :], (2, 2)), [x2])
    add("dropout", lambda: dc.dropout(a, 0.5, np.random.default_rng(7)), [a])

    nrng = np.random.default_rng(int(rng.integers(1 << 31)))
    with dc.precision(np.float64):
        lin = Linear(nrng, 4, 3)
        conv = Conv(nrng, 2, 3, (3,))
        dense = DenseBlock(nrng, 2, DenseBlockCfg(2, 2, (3, 3), bottleneck=True, bottleneck_width=3))
        trans = Transition(nrng, 3, 0.5, (2,), ndim=1)
        cell = GRUCell(nrng, 4, 3)
        bigru = BiGRU(nrng, 3, 2)
        att = CoverageAttention(nrng, 4, 3, 3, 2, 3)
    xs = _leaf(rng, 5, 4)
    add("linear", lambda: lin(xs), [xs] + lin.parameters())
    add("conv_layer", lambda: conv(x1), [x1] + conv.parameters())
    add("dense_block", lambda: dense(x2), [x2] + dense.parameters())
    x3 = _leaf(rng, 3, 6)
    add("transition", lambda: trans(x3), [x3] + trans.parameters())
    mo = Tensor(rng.permutation(12).reshape(3, 4) * 0.1, requires_grad=True, dtype=np.float64)
    add("maxout", lambda: maxout(mo), [mo])
    hx = _leaf(rng, 3)
    add("gru_step", lambda: cell(xs[0], hx), [xs, hx] + cell.parameters())
    seq = _leaf(rng, 4, 3)
    add("bigru", lambda: bigru(seq), [seq] + bigru.parameters())
    feats, past, hh = _leaf(rng, 5, 4), Tensor(np.abs(rng.normal(size=5)), dtype=np.float64), _leaf(rng, 3)

    def attend():
        ctx, alpha = att(hh, feats, att.project(feats), past)
        return dc.concat([ctx, alpha], axis=0)

    add("coverage_attention", attend, [feats, hh] + att.parameters())
    return cases


def check_primitive_gradients(seed: int = 0, rtol: float = 1e-3) -> CheckResult:
    def run():
        with dc.precision(np.float64):
            cases = primitive_cases(np.random.default_rng(seed))
            worst, where = 0.0, ""
            for name, (f, leaves) in cases.items():
                rep = dc.grad_check(f, leaves, h=1e-5, rtol=rtol)
                if rep.max_rel_error > worst:
                    worst, where = rep.max_rel_error, f"{name}:{rep.worst}"
        return worst <= rtol, f"{len(cases)} primitives, max rel err {worst:.2e} at {where}"

    return _timed("grad-check primitives", run)


def tiny_expression():
    """Three-stroke expression small enough for exhaustive finite differences."""
    return render_expression(["x", "+", "1"], np.random.default_rng(5), jitter=0.01, spacing=0.3, name="tiny")


def check_model_gradients(modes=MODES, preset: str = "micro", rtol: float = 1e-3, max_entries: int = 6,
                          seed: int = 0) -> CheckResult:
    def run():
        vocab = synthetic_vocab()
        e = tiny_expression()
        worst, where, n = 0.0, "", 0
        with dc.precision(np.float64):
            sample = featurize(e, vocab)
            for mode in modes:
                model = ScanModel(get_preset(preset), len(vocab), mode, seed=seed)
                # zero biases on an all-zero background put ReLUs exactly on their kink;
                # check at a generic point instead
                prng = np.random.default_rng(seed + 1)
                for prm in model.parameters():
                    prm.data += 0.05 * prng.normal(size=prm.shape)
                f = lambda: model.objective(sample, 0.2, vocab.sos, vocab.eos)[0]
                rep = dc.grad_check(f, model.parameters(), h=1e-5, rtol=rtol, max_entries=max_entries,
                                    rng=np.random.default_rng(seed))
                n += rep.n_checked
                if rep.max_rel_error >= worst:
                    worst, where = rep.max_rel_error, f"{mode}:{rep.worst}"
        return worst <= rtol, f"{len(modes)} modes, {n} entries, max rel err {worst:.2e} at {where}"

    return _timed("grad-check objective", run)


# -- pooling / attention / guider ----------------------------------------------

def check_pooling(n: int = 1000, tol: float = 1e-6, seed: int = 0) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n):
            T, M, D = int(rng.integers(1, 21)), int(rng.integers(1, 7)), int(rng.integers(1, 9))
            feats = rng.normal(size=(T, D))
            masks = rng.random((M, T)) * (rng.random((M, T)) < 0.5)
            for j in range(M):
                if masks[j].sum() == 0:
                    masks[j, rng.integers(T)] = rng.random() + 0.1
            with dc.precision(np.float64):
                got = pool_strokes(Tensor(feats), masks).data
            worst = max(worst, float(np.abs(got - oracles.pool_strokes(feats, masks)).max()))
        return worst <= tol, f"{n} instances, max abs err {worst:.2e}"

    return _timed("pooling oracle", run)


def check_attention(n: int = 200, tol: float = 1e-6, seed: int = 0) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        worst = sum_err = 0.0
        with dc.precision(np.float64):
            for i in range(n):
                T, D, H, A, C = (int(rng.integers(1, 9)), int(rng.integers(1, 7)), int(rng.integers(1, 6)),
                                 int(rng.integers(1, 6)), int(rng.integers(1, 4)))
                k = int(rng.choice([1, 3, 5]))
                prng = np.random.default_rng(int(rng.integers(1 << 31)))
                grid = i % 3 == 2
                if grid:
                    h, w = int(rng.integers(1, 4)), int(rng.integers(1, 4))
                    T = h * w
                att = CoverageAttention(prng, D, H, A, C, k, grid=grid)
                feats = rng.normal(size=(T, D))
                past = rng.random(T) * 2
                hh = rng.normal(size=H)
                ctx, alpha = att(Tensor(hh), Tensor(feats), att.project(Tensor(feats)), Tensor(past),
                                 (h, w) if grid else None)
                octx, oalpha = oracles.attend(att, hh, feats, past, (h, w) if grid else None)
                worst = max(worst, float(np.abs(ctx.data - octx).max()), float(np.abs(alpha.data - oalpha).max()))
                sum_err = max(sum_err, abs(float(alpha.data.sum()) - 1.0))
                # decoder-fusion re-attention on the same sizes
                dcfg = DecoderCfg(embed_dim=4, hidden=H, attn_dim=A, coverage_channels=C, coverage_kernel=k)
                dec = Decoder(prng, dcfg, 5, D, "decoder_fusion")
                s_on, s_off = rng.normal(size=(T, D)), rng.normal(size=(T, D))
                p_on, p_off = rng.random(T), rng.random(T)
                enc = dec.prepare([Tensor(s_on), Tensor(s_off)])
                state = dec.initial_state(enc)
                state.past = (Tensor(p_on), Tensor(p_off))
                c_mm, alphas = dec.reattend(Tensor(hh), enc, state)
                oc, oal = oracles.reattend(dec, hh, s_on, s_off, p_on, p_off)
                worst = max(worst, float(np.abs(c_mm.data - oc).max()),
                            *(float(np.abs(a.data - b).max()) for a, b in zip(alphas, oal)))
                sum_err = max(sum_err, *(abs(float(a.data.sum()) - 1.0) for a in alphas))
        ok = worst <= tol and sum_err <= tol
        return ok, f"{n} attend + {n} reattend instances, max abs err {worst:.2e}, max |sum alpha - 1| {sum_err:.2e}"

    return _timed("attention oracle", run)


def check_alpha_sums(preset: str = "toy", tol: float = 1e-6, seed: int = 0) -> CheckResult:
    """alpha sums to 1 at every teacher-forced step of every mode (default precision)."""

    def run():
        vocab = synthetic_vocab()
        e = render_expression(r"\frac { 9 } { 9 + \sqrt { 9 } }", np.random.default_rng(seed))
        sample = featurize(e, vocab)
        worst, steps = 0.0, 0
        for mode in MODES:
            model = ScanModel(get_preset(preset), len(vocab), mode, seed=seed)
            enc, state = model.start(sample)
            prev = vocab.sos
            for y in list(sample.targets) + [vocab.eos]:
                _, state, alphas = model.step(enc, state, prev)
                for a in alphas:
                    worst = max(worst, abs(float(np.sum(a, dtype=np.float64)) - 1.0))
                steps += 1
                prev = y
        return worst <= tol, f"{len(MODES)} modes, {steps} steps, max |sum alpha - 1| {worst:.2e}"

    return _timed("alpha sums", run)


def check_guider(n: int = 1000, tol: float = 1e-9, seed: int = 0) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        exact_err, gibbs_viol = 0.0, 0
        with dc.precision(np.float64):
            for _ in range(1, 50):
                M = int(rng.integers(1, 12))
                mp = int(rng.integers(1, M + 1))
                gamma = np.zeros(M)
                gamma[rng.choice(M, mp, replace=False)] = 1.0 / mp
                g = float(guider_loss([Tensor(gamma.copy())], gamma).data)
                exact_err = max(exact_err, abs(g - math.log(mp)))
            for _ in range(n):
                M = int(rng.integers(1, 12))
                mp = int(rng.integers(1, M + 1))
                gamma = np.zeros(M)
                gamma[rng.choice(M, mp, replace=False)] = 1.0 / mp
                alpha = rng.dirichlet(np.full(M, float(rng.choice([0.3, 1.0, 3.0]))))
                g = float(guider_loss([Tensor(alpha)], gamma).data)
                gibbs_viol += g < math.log(mp) - 1e-12
        ok = exact_err <= tol and gibbs_viol == 0
        return ok, f"max |G - ln M'| {exact_err:.1e}; Gibbs violations {gibbs_viol}/{n}"

    return _timed("guider values", run)


# -- search -----------------------------------------------------------------

def check_beam(n: int = 100, beam: int = 64, seed: int = 0) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        mismatch = greedy_mismatch = 0
        eos = 1
        for _ in range(n):
            k, max_len = int(rng.integers(2, 5)), int(rng.integers(1, 4))
            model = TableModel.random(rng, k, max_len, eos)
            best = beam_search(model, None, beam, max_len, sos=0, eos=eos)[0]
            seq, score = exhaustive_best(model, max_len, eos)
            mismatch += best.tokens != seq or abs(best.score - score) > 1e-12
            g = greedy(model, None, max_len, sos=0, eos=eos)
            b1 = beam_search(model, None, 1, max_len, sos=0, eos=eos)[0]
            greedy_mismatch += g.tokens != b1.tokens
        ok = mismatch == 0 and greedy_mismatch == 0
        return ok, f"{n} tables: beam={beam} vs exhaustive mismatches {mismatch}, beam=1 vs greedy mismatches {greedy_mismatch}"

    return _timed("beam oracle", run)


def run_all(quick: bool = False) -> list[CheckResult]:
    scale = 10 if quick else 1
    return [
        check_primitive_gradients(),
        check_model_gradients(max_entries=6 if quick else None),
        check_pooling(1000 // scale),
        check_attention(200 // scale),
        check_alpha_sums(),
        check_guider(1000 // scale),
        check_beam(100 // scale),
    ]
