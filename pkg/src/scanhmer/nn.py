"""Neural building blocks on top of :mod:`scanhmer.diffcore`."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import diffcore as dc
from .diffcore import ShapeError, Tensor


class Module:
    """Parameter container; children and parameters are discovered by attribute."""

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"checkpoint mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        for n, p in own.items():
            if state[n].shape != p.shape:
                raise ShapeError(f"load {n}", state[n].shape, p.shape)
            p.data[...] = state[n]


def glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int, name: str = "") -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def zeros(shape, name: str = "") -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True):
        self.w = glorot(rng, (d_in, d_out), d_in, d_out, "w")
        if bias:
            self.b = zeros((d_out,), "b")
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.w
        return y + self.b if hasattr(self, "b") else y

    @staticmethod
    def count(d_in: int, d_out: int, bias: bool = True) -> int:
        return d_in * d_out + (d_out if bias else 0)


class Conv(Module):
    """Same-padded conv; ``kernel`` is ``(k,)`` for 1-D or ``(kh, kw)`` for 2-D."""

    def __init__(self, rng, c_in: int, c_out: int, kernel: tuple[int, ...], bias: bool = True):
        taps = int(np.prod(kernel))
        self.w = glorot(rng, (c_out, c_in, *kernel), c_in * taps, c_out * taps, "w")
        if bias:
            self.b = zeros((c_out,), "b")
        self.kernel = tuple(kernel)
        self.c_in, self.c_out = c_in, c_out

    def __call__(self, x: Tensor) -> Tensor:
        b = getattr(self, "b", None)
        if len(self.kernel) == 1:
            return dc.conv1d(x, self.w, b)
        return dc.conv2d(x, self.w, b)

    @staticmethod
    def count(c_in: int, c_out: int, kernel: tuple[int, ...], bias: bool = True) -> int:
        return c_in * c_out * int(np.prod(kernel)) + (c_out if bias else 0)


@dataclass(frozen=True)
class DenseBlockCfg:
    num_layers: int
    growth_rate: int
    kernel: tuple[int, ...] = (3,)
    bottleneck: bool = False
    bottleneck_width: int = 0

    def __post_init__(self):
        if self.num_layers <= 0 or self.growth_rate <= 0 or any(k <= 0 for k in self.kernel):
            raise ValueError("dense block sizes must be positive")
        if self.bottleneck and self.bottleneck_width <= 0:
            raise ValueError("bottleneck_width must be positive")

    def out_channels(self, c_in: int) -> int:
        return c_in + self.num_layers * self.growth_rate

    def param_count(self, c_in: int) -> int:
        unit = (1,) * len(self.kernel)
        total = 0
        for i in range(self.num_layers):
            c = c_in + i * self.growth_rate
            if self.bottleneck:
                total += Conv.count(c, self.bottleneck_width, unit)
                total += Conv.count(self.bottleneck_width, self.growth_rate, self.kernel)
            else:
                total += Conv.count(c, self.growth_rate, self.kernel)
        return total


class DenseLayer(Module):
    def __init__(self, rng, c_in: int, cfg: DenseBlockCfg):
        unit = (1,) * len(cfg.kernel)
        if cfg.bottleneck:
            self.reduce = Conv(rng, c_in, cfg.bottleneck_width, unit)
            self.conv = Conv(rng, cfg.bottleneck_width, cfg.growth_rate, cfg.kernel)
        else:
            self.conv = Conv(rng, c_in, cfg.growth_rate, cfg.kernel)

    def __call__(self, x: Tensor) -> Tensor:
        if hasattr(self, "reduce"):
            x = self.reduce(x).relu()
        return self.conv(x).relu()


class DenseBlock(Module):
    """Each layer sees the channel concatenation of the input and all earlier outputs."""

    def __init__(self, rng, c_in: int, cfg: DenseBlockCfg):
        self.cfg = cfg
        self.c_in = c_in
        self.layers = [DenseLayer(rng, c_in + i * cfg.growth_rate, cfg) for i in range(cfg.num_layers)]

    @property
    def c_out(self) -> int:
        return self.cfg.out_channels(self.c_in)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[0] != self.c_in:
            raise ShapeError("dense_block", x.shape, (self.c_in,))
        feats = [x]
        for layer in self.layers:
            inp = feats[0] if len(feats) == 1 else dc.concat(feats, axis=0)
            feats.append(layer(inp))
        return dc.concat(feats, axis=0)


class Transition(Module):
    """1x1 conv to ``floor(theta * C)`` channels, then optional average pooling."""

    def __init__(self, rng, c_in: int, compression: float, pool: tuple[int, ...] | None, ndim: int):
        self.c_in = c_in
        self.c_out = int(np.floor(compression * c_in))
        if self.c_out <= 0:
            raise ValueError("transition leaves no channels")
        self.conv = Conv(rng, c_in, self.c_out, (1,) * ndim)
        self.pool = pool

    def __call__(self, x: Tensor) -> Tensor:
        y = self.conv(x)
        if self.pool is not None:
            y = dc.avgpool(y, self.pool)
        return y


def transition(x: Tensor, layer: Transition) -> Tensor:
    return layer(x)


def maxout(x: Tensor, pieces: int = 2) -> Tensor:
    """``out_i = max(x[pieces*i : pieces*(i+1)])`` over the last axis."""
    d = x.shape[-1]
    if d % pieces:
        raise ShapeError("maxout", x.shape, (pieces,))
    return x.reshape(*x.shape[:-1], d // pieces, pieces).max(axis=-1)


class GRUCell(Module):
    """z = sig(W_z x + U_z h), r = sig(W_r x + U_r h), h~ = tanh(W x + U (r*h)),
    h' = (1 - z) h + z h~."""

    def __init__(self, rng, d_in: int, hidden: int):
        H = hidden
        self.hidden = H
        self.d_in = d_in
        self.w_x = glorot(rng, (d_in, 3 * H), d_in, H, "w_x")
        self.b_x = zeros((3 * H,), "b_x")
        self.u_zr = glorot(rng, (H, 2 * H), H, H, "u_zr")
        self.u_h = glorot(rng, (H, H), H, H, "u_h")

    @staticmethod
    def count(d_in: int, hidden: int) -> int:
        H = hidden
        return d_in * 3 * H + 3 * H + H * 2 * H + H * H

    def project(self, x: Tensor) -> Tensor:
        """Input projection for one step (d_in,) or a whole sequence (T, d_in)."""
        if x.shape[-1] != self.d_in:
            raise ShapeError("gru_step", x.shape, (self.d_in,))
        return x @ self.w_x + self.b_x

    def step_projected(self, xw: Tensor, h: Tensor) -> Tensor:
        H = self.hidden
        if h.shape != (H,):
            raise ShapeError("gru_step", h.shape, (H,))
        zr = (xw[: 2 * H] + h @ self.u_zr).sigmoid()
        z, r = zr[:H], zr[H:]
        cand = (xw[2 * H:] + (r * h) @ self.u_h).tanh()
        return h + z * (cand - h)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        return self.step_projected(self.project(x), h)


def gru_step(x_t: Tensor, h_prev: Tensor, cell: GRUCell) -> Tensor:
    return cell(x_t, h_prev)


class BiGRU(Module):
    """Forward pass over t=1..L and backward pass over t=L..1, concatenated."""

    def __init__(self, rng, d_in: int, hidden: int):
        self.fwd = GRUCell(rng, d_in, hidden)
        self.bwd = GRUCell(rng, d_in, hidden)
        self.hidden = hidden

    @property
    def d_out(self) -> int:
        return 2 * self.hidden

    def _run(self, cell: GRUCell, seq: Tensor, reverse: bool) -> list[Tensor]:
        xw = cell.project(seq)
        dtype = seq.data.dtype.type
        h = Tensor(np.zeros(cell.hidden), dtype=dtype)
        steps = range(seq.shape[0] - 1, -1, -1) if reverse else range(seq.shape[0])
        out: list[Tensor] = [None] * seq.shape[0]
        for t in steps:
            h = cell.step_projected(xw[t], h)
            out[t] = h
        return out

    def __call__(self, seq: Tensor) -> Tensor:
        if seq.ndim != 2:
            raise ShapeError("bigru_layer", seq.shape)
        f = dc.stack(self._run(self.fwd, seq, False), axis=0)
        b = dc.stack(self._run(self.bwd, seq, True), axis=0)
        return dc.concat([f, b], axis=1)


def bigru_layer(seq: Tensor, layer: BiGRU) -> Tensor:
    return layer(seq)
