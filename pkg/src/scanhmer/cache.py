"""Binary feature cache written by ``preprocess``.

Layout: ``SCANFEAT1`` | uint32 meta_len | meta (utf-8 JSON) | records of
``uint32 name_len | name | uint8 dtype | uint32 rank | uint32 extent * rank |
little-endian data``.  dtype codes: 0 float64, 1 uint8 (booleans), 2 int64.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .corpus import CorpusError, Expression
from .features import GuiderMap, StrokeMaskSet
from .model import Sample

MAGIC = b"SCANFEAT1"
SUFFIX = ".feat"
_DTYPES = {0: "<f8", 1: "u1", 2: "<i8"}
_CODES = {"f": 0, "b": 1, "u": 1, "i": 2}


class CacheError(CorpusError):
    pass


def _arrays(s: Sample) -> dict[str, np.ndarray]:
    return {
        "xy": s.expression.xy,
        "stroke_ids": s.expression.stroke_ids,
        "targets": np.asarray(s.targets, dtype=np.int64),
        "online": s.online,
        "image": s.image,
        "mask_online": s.masks.online,
        "mask_offline": s.masks.offline,
        "pooled_online": s.masks.pooled_online,
        "pooled_offline": s.masks.pooled_offline,
        "gamma": s.guider.gamma,
        "valid": s.guider.valid,
    }


def dumps(s: Sample, factors: tuple[int, int] = (4, 8)) -> bytes:
    e = s.expression
    meta = {
        "name": s.name,
        "tokens": list(e.tokens),
        "alignment": None if e.alignment is None else {str(k): sorted(v) for k, v in e.alignment.items()},
        "factors": list(factors),
    }
    raw_meta = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(raw_meta)))
    buf.write(raw_meta)
    for name, arr in _arrays(s).items():
        arr = np.asarray(arr)
        code = _CODES[arr.dtype.kind]
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BI", code, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> tuple[Sample, tuple[int, int]]:
    if not blob.startswith(MAGIC):
        raise CacheError("bad feature-cache magic (expected SCANFEAT1)")
    try:
        pos = len(MAGIC)
        (n,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        meta = json.loads(blob[pos:pos + n].decode("utf-8"))
        pos += n
        arrs = {}
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            code, rank = struct.unpack_from("<BI", blob, pos)
            pos += 5
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            dt = np.dtype(_DTYPES[code])
            count = int(np.prod(shape)) if rank else 1
            arrs[name] = np.frombuffer(blob, dtype=dt, count=count, offset=pos).reshape(shape).copy()
            pos += dt.itemsize * count
    except (struct.error, ValueError, KeyError) as exc:
        raise CacheError(f"corrupt feature cache: {exc}") from None
    al = meta["alignment"]
    e = Expression(arrs["xy"], arrs["stroke_ids"], meta["tokens"],
                   None if al is None else {int(k): v for k, v in al.items()}, meta["name"])
    masks = StrokeMaskSet(arrs["mask_online"].astype(bool), arrs["mask_offline"].astype(bool),
                          arrs["pooled_online"], arrs["pooled_offline"])
    guider = GuiderMap(arrs["gamma"], arrs["valid"].astype(bool))
    sample = Sample(meta["name"], e, [int(t) for t in arrs["targets"]], arrs["online"], arrs["image"], masks, guider)
    return sample, tuple(meta["factors"])


def save(path, s: Sample, factors: tuple[int, int] = (4, 8)) -> None:
    Path(path).write_bytes(dumps(s, factors))


def load(path) -> tuple[Sample, tuple[int, int]]:
    return loads(Path(path).read_bytes())
