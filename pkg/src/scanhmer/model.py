"""End-to-end models for every mode, plus per-expression featurization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .config import ModelConfig, MODES, OFFLINE_MODES, ONLINE_MODES
from .corpus import Expression, Vocabulary
from .decoder import Decoder, DecoderState, Encoded, guider_loss
from .diffcore import Tensor
from .encoders import OfflineEncoder, OnlineEncoder, fuse_encoder, pool_strokes
from .features import (
    GuiderMap,
    RasterConfig,
    StrokeMaskSet,
    build_guider_map,
    build_masks,
    extract_online_features,
    normalize_traces,
    pad_online,
    rasterize_strokes,
)
from .nn import Module

STROKE_MODES = ("single-on", "single-off", "mm-d", "mm-e")


@dataclass
class Sample:
    """A fully featurized expression, valid for every mode."""

    name: str
    expression: Expression      # normalized
    targets: list[int]          # token ids without sos/eos
    online: np.ndarray          # (N_pad, 8)
    image: np.ndarray           # (H_in, W_in)
    masks: StrokeMaskSet
    guider: GuiderMap

    @property
    def num_strokes(self) -> int:
        return self.expression.num_strokes


def featurize(
    e: Expression,
    vocab: Vocabulary,
    raster: RasterConfig = RasterConfig(),
    online_factor: int = 4,
    offline_factor: int = 8,
) -> Sample:
    norm = normalize_traces(e)
    online = pad_online(extract_online_features(norm, normalize=False), online_factor)
    strokes = rasterize_strokes(norm, raster, offline_factor)
    image = strokes.any(axis=0).astype(np.float64)
    h_in, w_in = image.shape
    masks = build_masks(norm, strokes, len(online) // online_factor,
                        h_in // offline_factor, w_in // offline_factor, online_factor)
    return Sample(e.name, norm, vocab.encode(e.tokens), online, image, masks, build_guider_map(e, vocab))


def featurize_for(model: "ScanModel", e: Expression, vocab: Vocabulary, raster: RasterConfig = RasterConfig()) -> Sample:
    return featurize(e, vocab, raster, model.cfg.online.factor, model.cfg.offline.factor)


class ScanModel(Module):
    """Encoder(s) + decoder for one of the modes in ``config.MODES``.

    single-on / single-off: stroke-level features of one modality.
    mm-d: both modalities, fused in the decoder by re-attention.
    mm-e: online and offline stroke features concatenated per stroke.
    point / pixel: baselines attending over point or pixel features.
    """

    def __init__(self, cfg: ModelConfig, vocab_size: int, mode: str, seed: int = 0):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.mode = mode
        self.vocab_size = vocab_size
        multi = mode in ("mm-d", "mm-e")
        D = cfg.d_model
        if mode in ONLINE_MODES:
            self.online_enc = OnlineEncoder(rng, cfg.online, project_to=D if multi else None)
        if mode in OFFLINE_MODES:
            self.offline_enc = OfflineEncoder(rng, cfg.offline, D)
        if mode == "mm-e":
            d_feat, dmode = 2 * D, "encoder_fusion"
        elif mode == "mm-d":
            d_feat, dmode = D, "decoder_fusion"
        elif mode in ("single-on", "point"):
            d_feat, dmode = self.online_enc.d_out, "single"
        else:
            d_feat, dmode = D, "single"
        self.decoder = Decoder(rng, cfg.decoder, vocab_size, d_feat, dmode, grid=(mode == "pixel"))

    @property
    def uses_guider(self) -> bool:
        return self.mode in STROKE_MODES

    # -- encoding ---------------------------------------------------------
    def encode(self, sample: Sample) -> Encoded:
        mode = self.mode
        geometry = None
        if mode in ONLINE_MODES:
            points = self.online_enc(sample.online)
        if mode in OFFLINE_MODES:
            pixels, grid = self.offline_enc(sample.image)
        if mode == "point":
            feats = [points]
        elif mode == "pixel":
            feats, geometry = [pixels], grid
        elif mode == "single-on":
            feats = [pool_strokes(points, sample.masks.pooled_online)]
        elif mode == "single-off":
            feats = [pool_strokes(pixels, sample.masks.pooled_offline)]
        else:
            s_on = pool_strokes(points, sample.masks.pooled_online)
            s_off = pool_strokes(pixels, sample.masks.pooled_offline)
            feats = [fuse_encoder(s_on, s_off)] if mode == "mm-e" else [s_on, s_off]
        return self.decoder.prepare(feats, geometry)

    # -- training objective ----------------------------------------------
    def objective(self, sample: Sample, lam: float, sos: int, eos: int):
        """Teacher-forced ``(O, CE, sum_G, correct_steps, n_steps)``."""
        enc = self.encode(sample)
        state = self.decoder.initial_state(enc)
        targets = list(sample.targets) + [eos]
        ce = None
        guide = None
        correct = 0
        prev = sos
        for t, y in enumerate(targets):
            logits, state, alphas = self.decoder.step(prev, state, enc)
            nll = -logits.log_softmax()[y]
            ce = nll if ce is None else ce + nll
            correct += int(np.argmax(logits.data) == y)
            if self.uses_guider and t < len(sample.targets) and sample.guider.valid[t]:
                g = guider_loss(alphas, sample.guider.gamma[t])
                guide = g if guide is None else guide + g
            prev = y
        if guide is None:
            guide = Tensor(0.0, dtype=ce.data.dtype.type)
        total = ce + lam * guide if lam else ce
        return total, ce, guide, correct, len(targets)

    # -- incremental decoding for search ---------------------------------
    def start(self, sample: Sample) -> tuple[Encoded, DecoderState]:
        with dc.no_grad():
            enc = self.encode(sample)
            return enc, self.decoder.initial_state(enc)

    def step(self, enc: Encoded, state: DecoderState, token: int):
        """Log-probabilities (K,), next state and numpy alphas for one token."""
        with dc.no_grad():
            logits, new_state, alphas = self.decoder.step(token, state, enc)
            logp = logits.log_softmax().data.astype(np.float64)
        return logp, new_state, [a.data.copy() for a in alphas]
