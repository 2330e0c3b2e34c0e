"""Online (CNN-GRU) and offline (DenseNet) encoders, stroke pooling, encoder fusion."""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .config import OfflineEncoderCfg, OnlineEncoderCfg
from .diffcore import ShapeError, Tensor
from .nn import BiGRU, Conv, DenseBlock, DenseBlockCfg, GRUCell, Linear, Module, Transition


class OnlineEncoder(Module):
    """8 x N point features -> L x D point-level features, L = N / factor.

    Stem conv, ``num_blocks`` dense blocks of 1-D convs with transitions
    between them, pooling 1x2 after the blocks listed in ``pool_after``,
    then a stack of bidirectional GRUs.  ``project_to`` adds a final linear
    map (used in multi-modal models).
    """

    def __init__(self, rng, cfg: OnlineEncoderCfg, project_to: int | None = None):
        self.cfg = cfg
        k = (cfg.kernel,)
        self.stem = Conv(rng, 8, cfg.stem_channels, k)
        block_cfg = DenseBlockCfg(cfg.layers_per_block, cfg.growth_rate, k)
        c = cfg.stem_channels
        self.blocks, self.transitions = [], []
        for b in range(1, cfg.num_blocks + 1):
            block = DenseBlock(rng, c, block_cfg)
            self.blocks.append(block)
            c = block.c_out
            if b < cfg.num_blocks:
                pool = (2,) if b in cfg.pool_after else None
                t = Transition(rng, c, cfg.compression, pool, ndim=1)
                self.transitions.append(t)
                c = t.c_out
        self.cnn_channels = c
        self.grus = []
        d = c
        for _ in range(cfg.gru_layers):
            self.grus.append(BiGRU(rng, d, cfg.gru_hidden))
            d = 2 * cfg.gru_hidden
        if project_to is not None:
            self.proj = Linear(rng, d, project_to)
            d = project_to
        self.d_out = d

    @property
    def factor(self) -> int:
        return self.cfg.factor

    def cnn(self, x: Tensor) -> Tensor:
        """(8, N) -> (C, L)."""
        y = self.stem(x).relu()
        for b, block in enumerate(self.blocks, start=1):
            y = block(y)
            if b < len(self.blocks):
                y = self.transitions[b - 1](y)
            elif b in self.cfg.pool_after:
                y = dc.avgpool(y, (2,))
        return y

    def __call__(self, features: np.ndarray | Tensor) -> Tensor:
        x = dc.as_tensor(features)
        if x.ndim != 2 or x.shape[1] != 8:
            raise ShapeError("encode_online", x.shape, ("N", 8))
        if x.shape[0] % self.factor:
            raise ShapeError("encode_online", x.shape, (f"multiple of {self.factor}",))
        seq = self.cnn(x.T).T
        for gru in self.grus:
            seq = gru(seq)
        if hasattr(self, "proj"):
            seq = self.proj(seq)
        return seq

    def expected_param_count(self) -> int:
        cfg = self.cfg
        k = (cfg.kernel,)
        block_cfg = DenseBlockCfg(cfg.layers_per_block, cfg.growth_rate, k)
        total = Conv.count(8, cfg.stem_channels, k)
        c = cfg.stem_channels
        for b in range(1, cfg.num_blocks + 1):
            total += block_cfg.param_count(c)
            c = block_cfg.out_channels(c)
            if b < cfg.num_blocks:
                c_out = int(np.floor(cfg.compression * c))
                total += Conv.count(c, c_out, (1,))
                c = c_out
        d = c
        for _ in range(cfg.gru_layers):
            total += 2 * GRUCell.count(d, cfg.gru_hidden)
            d = 2 * cfg.gru_hidden
        if hasattr(self, "proj"):
            total += Linear.count(d, self.d_out)
        return total


class OfflineEncoder(Module):
    """1 x H_in x W_in image -> (H*W) x D pixel-level features, row-major."""

    def __init__(self, rng, cfg: OfflineEncoderCfg, d_model: int):
        self.cfg = cfg
        k = (cfg.kernel, cfg.kernel)
        self.stem = Conv(rng, 1, cfg.stem_channels, k)
        self.n_stem_pools = cfg.stem_pools
        block_cfg = DenseBlockCfg(cfg.layers_per_block, cfg.growth_rate, k, True, cfg.bottleneck_width)
        c = cfg.stem_channels
        self.blocks, self.transitions = [], []
        self.channel_trace = [c]
        for b in range(1, cfg.num_blocks + 1):
            block = DenseBlock(rng, c, block_cfg)
            self.blocks.append(block)
            c = block.c_out
            self.channel_trace.append(c)
            if b < cfg.num_blocks:
                t = Transition(rng, c, cfg.compression, (2, 2), ndim=2)
                self.transitions.append(t)
                c = t.c_out
                self.channel_trace.append(c)
        self.cnn_channels = c
        self.proj = Linear(rng, c, d_model)
        self.d_out = d_model

    @property
    def factor(self) -> int:
        return self.cfg.factor

    def grid(self, img: Tensor) -> Tensor:
        """(1, H_in, W_in) -> (C, H, W)."""
        y = self.stem(img).relu()
        for _ in range(self.n_stem_pools):
            y = dc.avgpool(y, (2, 2))
        for b, block in enumerate(self.blocks):
            y = block(y)
            if b < len(self.transitions):
                y = self.transitions[b](y)
        return y

    def __call__(self, image: np.ndarray | Tensor) -> tuple[Tensor, tuple[int, int]]:
        img = dc.as_tensor(image)
        if img.ndim != 2 or img.shape[0] % self.factor or img.shape[1] % self.factor:
            raise ShapeError("encode_offline", img.shape, (f"multiples of {self.factor}",))
        g = self.grid(img.reshape(1, *img.shape))
        c, h, w = g.shape
        flat = g.reshape(c, h * w).T
        return self.proj(flat), (h, w)


def pool_strokes(features: Tensor, pooled_masks: np.ndarray) -> Tensor:
    """s_j = (pmask_j / |pmask_j|_1) @ features; masks are (M, T) or (M, H, W)."""
    masks = np.asarray(pooled_masks, dtype=np.float64)
    masks = masks.reshape(masks.shape[0], -1)
    if masks.shape[1] != features.shape[0]:
        raise ShapeError("pool_strokes", masks.shape, features.shape)
    norms = masks.sum(axis=1, keepdims=True)
    if np.any(norms <= 0):
        raise ValueError("pool_strokes: zero-norm stroke mask")
    weights = Tensor(masks / norms, dtype=features.data.dtype.type)
    return weights @ features


def fuse_encoder(s_on: Tensor, s_off: Tensor) -> Tensor:
    """Row-wise concatenation of aligned online/offline stroke features."""
    if s_on.ndim != 2 or s_off.ndim != 2 or s_on.shape[0] != s_off.shape[0]:
        raise ShapeError("fuse_encoder (stroke alignment)", s_on.shape, s_off.shape)
    return dc.concat([s_on, s_off], axis=1)
