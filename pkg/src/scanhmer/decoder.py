"""Two-GRU decoder with coverage attention, re-attention fusion and the attention guider."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .config import DecoderCfg
from .diffcore import ShapeError, Tensor
from .nn import Conv, GRUCell, Linear, Module, glorot, maxout

DECODER_MODES = ("single", "encoder_fusion", "decoder_fusion")


class CoverageAttention(Module):
    """e_j = nu . tanh(W_att h + U_att s_j + U_f f_j [+ extra]), F = Q * sum(past alpha).

    The coverage conv runs along the attended axis: 1-D (strokes or points)
    or 2-D over an H x W grid when ``grid`` is set.
    """

    def __init__(self, rng, d_feat: int, hidden: int, attn_dim: int, channels: int, kernel: int, grid: bool = False):
        self.w_att = glorot(rng, (hidden, attn_dim), hidden, attn_dim, "w_att")
        self.u_att = glorot(rng, (d_feat, attn_dim), d_feat, attn_dim, "u_att")
        self.u_f = glorot(rng, (channels, attn_dim), channels, attn_dim, "u_f")
        self.nu = glorot(rng, (attn_dim,), attn_dim, 1, "nu")
        self.q = Conv(rng, 1, channels, (kernel, kernel) if grid else (kernel,), bias=False)
        self.d_feat = d_feat
        self.grid = grid

    def project(self, feats: Tensor) -> Tensor:
        if feats.ndim != 2 or feats.shape[1] != self.d_feat:
            raise ShapeError("attend", feats.shape, ("T", self.d_feat))
        return feats @ self.u_att

    def coverage(self, past: Tensor, geometry: tuple[int, int] | None) -> Tensor:
        """(T,) cumulative attention -> (T, q) coverage features."""
        T = past.shape[0]
        if self.grid:
            h, w = geometry
            f = self.q(past.reshape(1, h, w)).reshape(self.q.c_out, T)
        else:
            f = self.q(past.reshape(1, T))
        return f.T

    def __call__(
        self,
        h_hat: Tensor,
        feats: Tensor,
        proj: Tensor,
        past: Tensor,
        geometry: tuple[int, int] | None = None,
        extra: Tensor | None = None,
    ) -> tuple[Tensor, Tensor]:
        if past.shape != (feats.shape[0],):
            raise ShapeError("attend", past.shape, feats.shape)
        query = h_hat @ self.w_att
        if extra is not None:
            query = query + extra
        energy = (proj + self.coverage(past, geometry) @ self.u_f + query).tanh() @ self.nu
        alpha = energy.softmax()
        return alpha @ feats, alpha


@dataclass
class Encoded:
    """Decoder-side view of the encoder output (one or two modalities)."""

    feats: list[Tensor]
    proj: list[Tensor]
    geometry: tuple[int, int] | None = None

    @property
    def length(self) -> int:
        return self.feats[0].shape[0]


@dataclass
class DecoderState:
    h: Tensor
    past: tuple[Tensor, ...]
    energy_evals: int = 0


class Decoder(Module):
    """GRU_1 -> attention (or re-attention) -> GRU_2 -> maxout output head."""

    def __init__(self, rng, cfg: DecoderCfg, vocab_size: int, d_feat: int, mode: str = "single", grid: bool = False):
        if mode not in DECODER_MODES:
            raise ValueError(f"unknown decoder mode {mode!r}")
        if cfg.embed_dim % 2:
            raise ValueError("embedding dim must be even for maxout")
        self.mode = mode
        self.cfg = cfg
        self.vocab_size = vocab_size
        m, n, na = cfg.embed_dim, cfg.hidden, cfg.attn_dim
        kernel = cfg.pixel_coverage_kernel if grid else cfg.coverage_kernel
        self.embed = glorot(rng, (vocab_size, m), vocab_size, m, "embed")
        self.gru1 = GRUCell(rng, m, n)
        if mode == "decoder_fusion":
            self.att_on = CoverageAttention(rng, d_feat, n, na, cfg.coverage_channels, kernel)
            self.att_off = CoverageAttention(rng, d_feat, n, na, cfg.coverage_channels, kernel)
            self.u_p_on = glorot(rng, (d_feat, na), d_feat, na, "u_p_on")
            self.u_p_off = glorot(rng, (d_feat, na), d_feat, na, "u_p_off")
            self.w_fc = Linear(rng, 2 * d_feat, d_feat, bias=False)
            self.init = Linear(rng, 2 * d_feat, n)
        else:
            self.att = CoverageAttention(rng, d_feat, n, na, cfg.coverage_channels, kernel, grid)
            self.init = Linear(rng, d_feat, n)
        d_ctx = d_feat
        self.d_ctx = d_ctx
        self.gru2 = GRUCell(rng, d_ctx, n)
        self.w_h = Linear(rng, n, m)
        self.w_c = Linear(rng, d_ctx, m, bias=False)
        self.w_o = Linear(rng, m // 2, vocab_size)

    @property
    def num_modalities(self) -> int:
        return 2 if self.mode == "decoder_fusion" else 1

    def attentions(self) -> list[CoverageAttention]:
        return [self.att_on, self.att_off] if self.mode == "decoder_fusion" else [self.att]

    def prepare(self, feats: Sequence[Tensor], geometry=None) -> Encoded:
        feats = list(feats)
        if len(feats) != self.num_modalities:
            raise ValueError(f"{self.mode} decoding needs {self.num_modalities} feature sequence(s)")
        if len(feats) == 2 and feats[0].shape[0] != feats[1].shape[0]:
            raise ShapeError("reattend (stroke alignment)", feats[0].shape, feats[1].shape)
        proj = [att.project(f) for att, f in zip(self.attentions(), feats)]
        return Encoded(feats, proj, geometry)

    def initial_state(self, enc: Encoded) -> DecoderState:
        means = [f.mean(axis=0) for f in enc.feats]
        summary = means[0] if len(means) == 1 else dc.concat(means, axis=0)
        h0 = self.init(summary).tanh()
        dtype = h0.data.dtype.type
        past = tuple(Tensor(np.zeros(enc.length), dtype=dtype) for _ in enc.feats)
        return DecoderState(h0, past, 0)

    def attend(self, h_hat: Tensor, enc: Encoded, state: DecoderState):
        """Single-modal (or fused-feature) coverage attention."""
        ctx, alpha = self.att(h_hat, enc.feats[0], enc.proj[0], state.past[0], enc.geometry)
        return ctx, [alpha]

    def reattend(self, h_hat: Tensor, enc: Encoded, state: DecoderState):
        """Pre-attention per modality, then fine attention conditioned on the other modality."""
        s_on, s_off = enc.feats
        p_on, p_off = enc.proj
        past_on, past_off = state.past
        c_hat_on, _ = self.att_on(h_hat, s_on, p_on, past_on)
        c_hat_off, _ = self.att_off(h_hat, s_off, p_off, past_off)
        c_on, a_on = self.att_on(h_hat, s_on, p_on, past_on, extra=c_hat_off @ self.u_p_off)
        c_off, a_off = self.att_off(h_hat, s_off, p_off, past_off, extra=c_hat_on @ self.u_p_on)
        c_mm = self.w_fc(dc.concat([c_on, c_off], axis=0)).tanh()
        return c_mm, [a_on, a_off]

    def step(self, y_prev: int, state: DecoderState, enc: Encoded) -> tuple[Tensor, DecoderState, list[Tensor]]:
        """One decode step; returns logits (K,), the new state and this step's alphas."""
        if not 0 <= int(y_prev) < self.vocab_size:
            raise IndexError(f"unknown token id {y_prev}")
        emb = dc.embedding(self.embed, int(y_prev))
        h_hat = self.gru1(emb, state.h)
        if self.mode == "decoder_fusion":
            ctx, alphas = self.reattend(h_hat, enc, state)
            evals = 4 * enc.length
        else:
            ctx, alphas = self.attend(h_hat, enc, state)
            evals = enc.length
        h = self.gru2(ctx, h_hat)
        logits = self.w_o(maxout(emb + self.w_h(h) + self.w_c(ctx)))
        past = tuple(p + a for p, a in zip(state.past, alphas))
        return logits, DecoderState(h, past, state.energy_evals + evals), alphas


def guider_loss(alphas: Sequence[Tensor], gamma: np.ndarray | None, valid: bool = True) -> Tensor | float:
    """G_t = -sum_j gamma_j log alpha_j, summed over modalities; 0 when not valid."""
    if not valid or gamma is None:
        return 0.0
    total = None
    for a in alphas:
        if a.shape != np.shape(gamma):
            raise ShapeError("guider_loss", a.shape, np.shape(gamma))
        g = Tensor(gamma, dtype=a.data.dtype.type)
        term = -(g * a.log()).sum()
        total = term if total is None else total + term
    return total
