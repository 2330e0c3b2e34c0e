"""Greedy and beam-search decoding over anything with ``start``/``step``.

A decodable model exposes::

    start(sample) -> (enc, state)
    step(enc, state, token) -> (logp (K,), new_state, alphas)

``ScanModel`` satisfies this; so does ``TableModel`` (hand-specified
probability tables used by the search oracles).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .corpus import Expression, Vocabulary
from .features import RasterConfig
from .model import featurize_for


@dataclass
class BeamHypothesis:
    tokens: tuple[int, ...]        # emitted ids, eos included when finished
    score: float                   # cumulative -log p
    state: Any                     # decoder state that has not yet consumed tokens[-1]
    finished: bool = False
    alphas: tuple = ()             # per emitted token: list of per-modality alpha arrays

    @property
    def key(self):
        return (self.score, self.tokens)

    @property
    def output(self) -> tuple[int, ...]:
        return self.tokens[:-1] if self.finished else self.tokens


def _last(h: BeamHypothesis, sos: int) -> int:
    return h.tokens[-1] if h.tokens else sos


def beam_search(model, sample, beam: int = 10, max_len: int = 200, sos: int = 0, eos: int = 1) -> list[BeamHypothesis]:
    """Left-to-right beam search without length normalization.

    Every live hypothesis is expanded over all K tokens; finished and live
    hypotheses compete in one pool of size ``beam``.  Ties go to the lower
    token ids, then the shorter sequence.  Returns the final pool sorted by
    ascending score.
    """
    if beam < 1 or max_len < 1:
        raise ValueError("beam and max_len must be >= 1")
    enc, state = model.start(sample)
    pool = [BeamHypothesis((), 0.0, state)]
    for _ in range(max_len):
        cands = [h for h in pool if h.finished]
        for h in pool:
            if h.finished:
                continue
            logp, nxt, alphas = model.step(enc, h.state, _last(h, sos))
            for k in range(len(logp)):
                cands.append(BeamHypothesis(h.tokens + (k,), h.score - float(logp[k]), nxt,
                                            k == eos, h.alphas + (alphas,)))
        cands.sort(key=lambda h: h.key)
        pool = cands[:beam]
        if all(h.finished for h in pool):
            break
    return pool


def greedy(model, sample, max_len: int = 200, sos: int = 0, eos: int = 1) -> BeamHypothesis:
    """Argmax decoding (lowest id on ties)."""
    enc, state = model.start(sample)
    h = BeamHypothesis((), 0.0, state)
    for _ in range(max_len):
        logp, nxt, alphas = model.step(enc, h.state, _last(h, sos))
        k = int(np.argmax(logp))
        h = BeamHypothesis(h.tokens + (k,), h.score - float(logp[k]), nxt, k == eos, h.alphas + (alphas,))
        if h.finished:
            break
    return h


class TableModel:
    """Decoding model defined by probability tables keyed on the emitted prefix.

    ``tables[prefix]`` is a probability vector over K tokens; prefixes
    missing from the mapping fall back to ``default`` (uniform if None).
    The decoder state is simply the prefix itself.
    """

    def __init__(self, tables: Mapping[tuple[int, ...], Sequence[float]], k: int, default=None):
        self.k = k
        self.tables = {tuple(p): np.asarray(v, dtype=np.float64) for p, v in tables.items()}
        self.default = np.full(k, 1.0 / k) if default is None else np.asarray(default, dtype=np.float64)
        self.calls = 0

    @classmethod
    def random(cls, rng: np.random.Generator, k: int, max_len: int, eos: int = 1) -> "TableModel":
        """Dirichlet-random tables for every eos-free prefix shorter than ``max_len``."""
        live = [i for i in range(k) if i != eos]
        tables = {}
        for n in range(max_len):
            for prefix in itertools.product(live, repeat=n):
                tables[prefix] = rng.dirichlet(np.ones(k))
        return cls(tables, k)

    def probs(self, prefix: Sequence[int]) -> np.ndarray:
        return self.tables.get(tuple(prefix), self.default)

    def start(self, sample=None):
        return None, None

    def step(self, enc, state, token):
        self.calls += 1
        prefix = () if state is None else state + (token,)
        with np.errstate(divide="ignore"):
            logp = np.log(self.probs(prefix))
        return logp, prefix, []

    def score(self, tokens: Sequence[int]) -> float:
        """-sum log p of ``tokens`` (eos included if present)."""
        total = 0.0
        for i, t in enumerate(tokens):
            p = float(self.probs(tokens[:i])[t])
            total += math.inf if p <= 0 else -math.log(p)
        return total


def exhaustive_best(model: TableModel, max_len: int, eos: int) -> tuple[tuple[int, ...], float]:
    """Brute-force minimum over every sequence the search could return.

    Candidates are eos-terminated sequences of length <= max_len and
    eos-free sequences of exactly max_len tokens; ties follow the beam
    order (lower ids, then shorter).
    """
    live = [i for i in range(model.k) if i != eos]
    cands = [body + (eos,) for n in range(max_len) for body in itertools.product(live, repeat=n)]
    cands += list(itertools.product(live, repeat=max_len))
    score, seq = min((model.score(c), c) for c in cands)
    return seq, score


# -- end-to-end recognition ---------------------------------------------------

@dataclass
class Recognition:
    name: str
    tokens: list[str]
    score: float
    records: list[dict]
    energy_evals: int = 0


def alpha_records(h: BeamHypothesis, vocab: Vocabulary, mode: str) -> list[dict]:
    """One JSON-able record per emitted token (eos included)."""
    out = []
    for t, (tok, alphas) in enumerate(zip(h.tokens, h.alphas)):
        rec = {"step": t, "token": vocab.tokens[tok], "mode": mode}
        if len(alphas) == 2:
            rec["alpha_on"] = [float(a) for a in alphas[0]]
            rec["alpha_off"] = [float(a) for a in alphas[1]]
        else:
            rec["alpha"] = [float(a) for a in alphas[0]]
        out.append(rec)
    return out


def recognize(model, expression: Expression, vocab: Vocabulary, beam: int = 10, max_len: int = 200,
              raster: RasterConfig = RasterConfig(), sample=None) -> Recognition:
    """featurize -> encode -> beam search; returns the best hypothesis as tokens."""
    if sample is None:
        sample = featurize_for(model, expression, vocab, raster)
    best = beam_search(model, sample, beam, max_len, vocab.sos, vocab.eos)[0]
    evals = getattr(best.state, "energy_evals", 0)
    return Recognition(expression.name, vocab.decode(best.output), best.score,
                       alpha_records(best, vocab, model.mode), evals)


def format_line(name: str, tokens: Sequence[str], score: float) -> str:
    return f"{name}\t{' '.join(tokens)}\t{score:.6f}"


def parse_line(line: str) -> tuple[str, list[str], float]:
    name, toks, score = line.rstrip("\n").split("\t")
    return name, toks.split(), float(score)
