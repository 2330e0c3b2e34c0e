"""Stroke data ingestion: InkML subset, native text format, vocabulary."""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

SOS = "<sos>"
EOS = "<eos>"
DEFAULT_STRUCTURAL = ("{", "}", "^", "_", r"\frac", r"\sqrt")


class CorpusError(ValueError):
    """Base class for data errors raised while reading corpora."""


class ParseError(CorpusError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + where)


class AlignmentError(CorpusError):
    pass


class EmptyExpressionError(CorpusError):
    pass


class UnknownTokenError(CorpusError):
    def __init__(self, token: str):
        self.token = token
        super().__init__(f"unknown token {token!r}")


@dataclass(frozen=True)
class TracePoint:
    x: float
    y: float
    stroke_id: int


@dataclass(frozen=True, eq=False)
class Expression:
    """One handwritten expression.

    ``xy`` is (N, 2), ``stroke_ids`` is (N,) with dense ids in writing
    order.  ``tokens`` are LaTeX token strings; ``alignment`` maps a token
    position to the strokes of that symbol.
    """

    xy: np.ndarray
    stroke_ids: np.ndarray
    tokens: tuple[str, ...] = ()
    alignment: Mapping[int, frozenset[int]] | None = None
    name: str = ""
    num_strokes: int = field(init=False)

    def __post_init__(self):
        xy = np.array(self.xy, dtype=np.float64).reshape(-1, 2)
        sid = np.array(self.stroke_ids, dtype=np.int64).reshape(-1)
        if len(xy) == 0:
            raise EmptyExpressionError("expression has no points")
        if len(sid) != len(xy):
            raise CorpusError("stroke_ids and xy length differ")
        if not np.all(np.isfinite(xy)):
            raise CorpusError("non-finite coordinate")
        m = int(sid.max()) + 1
        if sid.min() < 0 or np.any(np.bincount(sid, minlength=m) == 0):
            raise CorpusError("stroke ids must be dense in [0, M)")
        steps = np.diff(sid)
        if sid[0] != 0 or np.any((steps != 0) & (steps != 1)):
            raise CorpusError("points of a stroke must be contiguous, ids in writing order")
        xy.setflags(write=False)
        sid.setflags(write=False)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "stroke_ids", sid)
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "num_strokes", m)
        if self.alignment is not None:
            al = {int(k): frozenset(int(s) for s in v) for k, v in self.alignment.items()}
            owner: dict[int, int] = {}
            for pos, strokes in al.items():
                if not 0 <= pos < len(self.tokens):
                    raise AlignmentError(f"alignment token position {pos} out of range")
                for s in strokes:
                    if not 0 <= s < m:
                        raise AlignmentError(f"alignment references stroke {s}, only {m} strokes")
                    if s in owner:
                        raise AlignmentError(f"stroke {s} aligned to positions {owner[s]} and {pos}")
                    owner[s] = pos
            object.__setattr__(self, "alignment", dict(sorted(al.items())))

    @property
    def num_points(self) -> int:
        return len(self.xy)

    @property
    def points(self) -> list[TracePoint]:
        return [TracePoint(float(x), float(y), int(s)) for (x, y), s in zip(self.xy, self.stroke_ids)]

    def strokes(self) -> list[np.ndarray]:
        bounds = np.flatnonzero(np.diff(self.stroke_ids)) + 1
        return np.split(self.xy, bounds)

    def with_xy(self, xy: np.ndarray) -> "Expression":
        return Expression(xy, self.stroke_ids, self.tokens, self.alignment, self.name)


def _renumber(raw_ids: Sequence, where: Sequence[int] | None = None) -> tuple[list[int], dict]:
    """Dense ids by first appearance; rejects a stroke that reappears."""
    mapping: dict = {}
    out = []
    prev = None
    for k, r in enumerate(raw_ids):
        if r not in mapping:
            mapping[r] = len(mapping)
        elif r != prev:
            line = where[k] if where is not None else None
            raise ParseError(f"points of stroke {r} are not contiguous", line)
        out.append(mapping[r])
        prev = r
    return out, mapping


# -- vocabulary -------------------------------------------------------------

class Vocabulary:
    """Bijective token <-> id map with reserved sos/eos.

    File format: one token per line, the 0-based line number among token
    lines is the id; an optional first line ``structural: tok tok ...``
    declares the structural set and does not take an id.
    """

    def __init__(self, tokens: Sequence[str], structural: Iterable[str] | None = None):
        tokens = list(tokens)
        if len(set(tokens)) != len(tokens):
            dup = sorted({t for t in tokens if tokens.count(t) > 1})
            raise CorpusError(f"duplicate vocabulary tokens: {dup}")
        for req in (SOS, EOS):
            if req not in tokens:
                raise CorpusError(f"vocabulary lacks mandatory token {req}")
        self.tokens = tokens
        self.ids = {t: i for i, t in enumerate(tokens)}
        struct = set(DEFAULT_STRUCTURAL if structural is None else structural)
        self.structural = frozenset(t for t in struct if t in self.ids)
        missing = set(struct) - set(self.ids)
        if structural is not None and missing:
            raise CorpusError(f"structural tokens not in vocabulary: {sorted(missing)}")

    @property
    def sos(self) -> int:
        return self.ids[SOS]

    @property
    def eos(self) -> int:
        return self.ids[EOS]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.ids

    def encode(self, tokens: Iterable[str]) -> list[int]:
        out = []
        for t in tokens:
            if t not in self.ids:
                raise UnknownTokenError(t)
            out.append(self.ids[t])
        return out

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def is_structural(self, token: str) -> bool:
        return token in self.structural

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        structural = None
        if lines and lines[0].startswith("structural:"):
            structural = lines[0][len("structural:"):].split()
            lines = lines[1:]
        return cls([ln.strip() for ln in lines], structural)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def to_text(self) -> str:
        head = "structural: " + " ".join(sorted(self.structural)) + "\n"
        return head + "".join(t + "\n" for t in self.tokens)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def tokenize_latex(label: str, vocab: Vocabulary) -> list[int]:
    """Whitespace-separated LaTeX label to ids (no sos/eos)."""
    return vocab.encode(label.split())


_LATEX_LEX = re.compile(r"\\[A-Za-z]+|\\.|\S")


def lex_latex(label: str) -> list[str]:
    """Split an unspaced LaTeX string (CROHME truth) into tokens."""
    label = label.strip()
    if len(label) >= 2 and label[0] == "$" and label[-1] == "$":
        label = label.strip("$")
    return _LATEX_LEX.findall(label)


# -- native text format -----------------------------------------------------

_HEADER = re.compile(r"^strokes (\d+) points (\d+)$")


def parse_native(data: bytes | str, name: str = "") -> Expression:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise EmptyExpressionError("empty file")
    m = _HEADER.match(lines[0].strip())
    if not m:
        raise ParseError("expected header 'strokes M points N'", 1)
    n_strokes, n_points = int(m.group(1)), int(m.group(2))
    if n_points == 0:
        raise EmptyExpressionError("expression has no points")
    if len(lines) < 1 + n_points + 1:
        raise ParseError(f"expected {n_points} point lines and a label line", len(lines))
    xy, raw = [], []
    for k in range(n_points):
        fields = lines[1 + k].split()
        if len(fields) != 3:
            raise ParseError(f"point line needs 3 fields, got {len(fields)}", 2 + k)
        try:
            xy.append((float(fields[0]), float(fields[1])))
            raw.append(int(fields[2]))
        except ValueError:
            raise ParseError("malformed number on point line", 2 + k) from None
    sid, mapping = _renumber(raw, where=list(range(2, 2 + n_points)))
    if len(mapping) != n_strokes:
        raise ParseError(f"header declares {n_strokes} strokes, found {len(mapping)}", 1)
    label_line = lines[1 + n_points]
    if not (label_line == "label" or label_line.startswith("label ")):
        raise ParseError("expected 'label' line", 2 + n_points)
    tokens = label_line[len("label"):].split()
    alignment = None
    for k, ln in enumerate(lines[2 + n_points:], start=3 + n_points):
        if not ln.strip():
            continue
        head, sep, rest = ln.partition(":")
        if not sep:
            raise ParseError("expected 'tokpos: id id ...'", k)
        try:
            pos = int(head)
            strokes = [int(s) for s in rest.split()]
        except ValueError:
            raise ParseError("malformed alignment line", k) from None
        alignment = alignment or {}
        if pos in alignment:
            raise AlignmentError(f"token position {pos} aligned twice")
        for s in strokes:
            if s not in mapping:
                raise AlignmentError(f"alignment references unknown stroke {s}")
        alignment[pos] = frozenset(mapping[s] for s in strokes)
    return Expression(np.array(xy), sid, tokens, alignment, name)


def serialize_native(e: Expression) -> str:
    out = [f"strokes {e.num_strokes} points {e.num_points}"]
    for (x, y), s in zip(e.xy.tolist(), e.stroke_ids.tolist()):
        out.append(f"{x!r} {y!r} {s}")
    out.append(" ".join(["label", *e.tokens]))
    for pos, strokes in (e.alignment or {}).items():
        out.append(f"{pos}: " + " ".join(str(s) for s in sorted(strokes)))
    return "\n".join(out) + "\n"


# -- InkML subset ------------------------------------------------------------

def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _truth_of(elem: ET.Element) -> str | None:
    for child in elem:
        if _local(child.tag) == "annotation" and child.get("type") == "truth":
            return (child.text or "").strip()
    return None


_LABEL_ALIASES = {"-": (r"\frac",)}


def parse_inkml(data: bytes | str, name: str = "") -> Expression:
    """Read traces, the truth label and symbol traceGroups.

    Group labels are matched to token positions left to right, each taking
    the first unclaimed token equal to its label (a ``-`` group may claim a
    ``\\frac``).  Groups whose label cannot be placed are dropped.
    """
    raw = data.encode("utf-8") if isinstance(data, str) else data
    try:
        root = ET.fromstring(raw)
    except ET.ParseError as exc:
        line, col = exc.position
        raise ParseError(f"malformed XML: {exc.msg if hasattr(exc, 'msg') else exc}", line, col) from None
    traces = [el for el in root.iter() if _local(el.tag) == "trace"]
    if not traces:
        raise EmptyExpressionError("document has no trace elements")
    xy, raw_ids, trace_key = [], [], {}
    for k, tr in enumerate(traces):
        tid = tr.get("id", f"#{k}")
        trace_key[tid] = k
        pts = [p.split() for p in (tr.text or "").strip().split(",") if p.strip()]
        for p in pts:
            if len(p) < 2:
                raise ParseError(f"trace {tid} has a point with fewer than 2 coordinates")
            xy.append((float(p[0]), float(p[1])))
            raw_ids.append(k)
    if not xy:
        raise EmptyExpressionError("all traces are empty")
    sid, mapping = _renumber(raw_ids)
    truth = _truth_of(root)
    tokens = lex_latex(truth) if truth else []

    groups = []
    for tg in root.iter():
        if _local(tg.tag) != "traceGroup":
            continue
        label = _truth_of(tg)
        refs = [v.get("traceDataRef") for v in tg if _local(v.tag) == "traceView"]
        if label is None or not refs:
            continue
        strokes = set()
        for r in refs:
            if r not in trace_key:
                raise AlignmentError(f"traceGroup references unknown trace {r!r}")
            k = trace_key[r]
            if k not in mapping:
                continue  # empty trace
            strokes.add(mapping[k])
        groups.append((label, strokes))

    alignment = None
    if groups:
        alignment = {}
        claimed: set[int] = set()
        for label, strokes in groups:
            wanted = (label, *_LABEL_ALIASES.get(label, ()))
            pos = next((i for w in wanted for i, t in enumerate(tokens) if t == w and i not in claimed), None)
            if pos is None or not strokes:
                continue
            claimed.add(pos)
            alignment[pos] = frozenset(strokes)
    return Expression(np.array(xy), sid, tokens, alignment, name)


def load_expression(path) -> Expression:
    path = Path(path)
    data = path.read_bytes()
    stem = path.name.split(".")[0]
    if path.suffix.lower() == ".inkml":
        return parse_inkml(data, stem)
    return parse_native(data, stem)


CORPUS_SUFFIXES = (".inkml", ".txt")


VOCAB_FILE = "vocab.txt"


def corpus_files(directory) -> list[Path]:
    """Expression files of a directory, sorted by name; ``vocab.txt`` is not an expression."""
    return sorted(p for p in Path(directory).iterdir()
                  if p.suffix.lower() in CORPUS_SUFFIXES and p.name != VOCAB_FILE)


def load_corpus(directory) -> list[Expression]:
    """All ``*.inkml`` and ``*.txt`` expressions of a directory, sorted by name."""
    files = corpus_files(directory)
    if not files:
        raise CorpusError(f"no expression files in {directory}")
    return [load_expression(p) for p in files]
