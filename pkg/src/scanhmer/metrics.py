"""Expression-level recognition metrics."""

from __future__ import annotations

import json
from typing import Iterable, Sequence

from .corpus import DEFAULT_STRUCTURAL

WILDCARD = "<sym>"

Seq = Sequence[str]


def _check(preds: Sequence[Seq], refs: Sequence[Seq]) -> None:
    if len(preds) != len(refs):
        raise ValueError(f"{len(preds)} predictions for {len(refs)} references")


def _rate(hits: int, n: int) -> float:
    return 100.0 * hits / n if n else 0.0


def levenshtein(a: Seq, b: Seq) -> int:
    """Token-level edit distance (unit insert/delete/substitute)."""
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def exprate(preds: Sequence[Seq], refs: Sequence[Seq]) -> float:
    _check(preds, refs)
    return _rate(sum(list(p) == list(r) for p, r in zip(preds, refs)), len(refs))


def leq_k_error(preds: Sequence[Seq], refs: Sequence[Seq], k: int) -> float:
    if k not in (1, 2, 3):
        raise ValueError("k must be 1, 2 or 3")
    _check(preds, refs)
    return _rate(sum(levenshtein(p, r) <= k for p, r in zip(preds, refs)), len(refs))


def structure(tokens: Seq, structural: Iterable[str] = DEFAULT_STRUCTURAL) -> list[str]:
    """Replace every non-structural token by a single wildcard."""
    keep = set(structural)
    return [t if t in keep else WILDCARD for t in tokens]


def strurate(preds: Sequence[Seq], refs: Sequence[Seq], structural: Iterable[str] = DEFAULT_STRUCTURAL) -> float:
    _check(preds, refs)
    keep = frozenset(structural)
    return _rate(sum(structure(p, keep) == structure(r, keep) for p, r in zip(preds, refs)), len(refs))


def report(preds: Sequence[Seq], refs: Sequence[Seq], structural: Iterable[str] = DEFAULT_STRUCTURAL) -> dict:
    return {
        "exprate": exprate(preds, refs),
        "leq1": leq_k_error(preds, refs, 1),
        "leq2": leq_k_error(preds, refs, 2),
        "leq3": leq_k_error(preds, refs, 3),
        "strurate": strurate(preds, refs, structural),
        "n": len(refs),
    }


def write_report(path, rep: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rep, fh, indent=2, sort_keys=True)
        fh.write("\n")
