"""Teacher-forced training with adadelta and decoupled weight decay."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor, checkpoint
from .model import Sample, ScanModel

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "objective", "ce", "guider", "token_acc")


class NumericError(RuntimeError):
    """Raised when the objective becomes NaN or infinite."""


@dataclass
class TrainConfig:
    lam: float = 0.2
    weight_decay: float = 1e-5
    rho: float = 0.95
    eps: float = 1e-8
    lr: float = 1.0
    clip: float = 0.0
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0 or not 0 < self.rho < 1 or self.eps <= 0:
            raise ValueError("need lambda >= 0, 0 < rho < 1, eps > 0")


@dataclass
class AdadeltaState:
    sq_grad: list[np.ndarray]
    sq_delta: list[np.ndarray]

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "AdadeltaState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adadelta_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    state: AdadeltaState,
    rho: float = 0.95,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    lr: float = 1.0,
) -> None:
    """In-place update: Eg2 <- rho Eg2 + (1-rho) g^2; d = -sqrt((Ed2+eps)/(Eg2+eps)) g;
    Ed2 <- rho Ed2 + (1-rho) d^2; x <- x + lr d - wd x."""
    for p, g, eg, ed in zip(params, grads, state.sq_grad, state.sq_delta):
        eg *= rho
        eg += (1.0 - rho) * g * g
        delta = -np.sqrt((ed + eps) / (eg + eps)) * g
        ed *= rho
        ed += (1.0 - rho) * delta * delta
        decay = weight_decay * p.data
        p.data += lr * delta
        p.data -= decay


def compute_objective(model: ScanModel, sample: Sample, lam: float, sos: int, eos: int):
    """``(O, CE, sum_G)`` as tensors for one expression."""
    total, ce, guide, _, _ = model.objective(sample, lam, sos, eos)
    return total, ce, guide


@dataclass
class EpochStats:
    epoch: int
    objective: float
    ce: float
    guider: float
    token_acc: float

    def row(self) -> list:
        return [self.epoch, self.objective, self.ce, self.guider, self.token_acc]


class Trainer:
    """Batch-size-1 training with a seeded per-epoch shuffle."""

    def __init__(self, model: ScanModel, samples: Sequence[Sample], cfg: TrainConfig, sos: int, eos: int):
        if not samples:
            raise ValueError("empty training corpus")
        self.model = model
        self.samples = list(samples)
        self.cfg = cfg
        self.sos, self.eos = sos, eos
        self.params = model.parameters()
        self.state = AdadeltaState.for_params(self.params)
        self.rng = np.random.default_rng(cfg.seed)
        self.epoch = 0
        self.history: list[EpochStats] = []

    def _update(self) -> None:
        grads = [p.grad for p in self.params]
        if self.cfg.clip > 0:
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
            if norm > self.cfg.clip:
                grads = [g * (self.cfg.clip / norm) for g in grads]
        adadelta_step(self.params, grads, self.state, self.cfg.rho, self.cfg.eps,
                      self.cfg.weight_decay, self.cfg.lr)

    def run_epoch(self) -> EpochStats:
        self.epoch += 1
        order = self.rng.permutation(len(self.samples))
        tot = ce_sum = g_sum = 0.0
        correct = steps = 0
        for i in order:
            self.model.zero_grad()
            total, ce, guide, ok, n = self.model.objective(self.samples[i], self.cfg.lam, self.sos, self.eos)
            value = float(total.data)
            if not math.isfinite(value):
                raise NumericError(f"non-finite objective at epoch {self.epoch} on {self.samples[i].name!r}")
            dc.backward(total)
            self._update()
            tot += value
            ce_sum += float(ce.data)
            g_sum += float(guide.data)
            correct += ok
            steps += n
        k = len(self.samples)
        stats = EpochStats(self.epoch, tot / k, ce_sum / k, g_sum / k, correct / steps)
        self.history.append(stats)
        log.info("epoch %d objective %.4f ce %.4f guider %.4f acc %.3f", *stats.row())
        return stats


def save_model(model: ScanModel, path) -> None:
    checkpoint.save(path, model.state_dict())


def load_weights(model: ScanModel, path) -> None:
    model.load_state_dict(checkpoint.load(path))


def train(
    model: ScanModel,
    samples: Sequence[Sample],
    cfg: TrainConfig,
    sos: int,
    eos: int,
    ckpt_path=None,
    metrics_path=None,
) -> list[EpochStats]:
    """Run ``cfg.epochs`` epochs, checkpointing and logging after each one."""
    trainer = Trainer(model, samples, cfg, sos, eos)
    writer = None
    fh = None
    if metrics_path is not None:
        fh = open(metrics_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
    try:
        for _ in range(cfg.epochs):
            stats = trainer.run_epoch()
            if writer is not None:
                writer.writerow(stats.row())
                fh.flush()
            if ckpt_path is not None:
                save_model(model, ckpt_path)
    finally:
        if fh is not None:
            fh.close()
    return trainer.history
