"""Canonical binary files: corpora, checkpoints and metric reports.

File layout (all little-endian)::

    magic     4 bytes  b"NNRB"
    version   u16
    kind      u32 length + UTF-8  (nurbs | uvgrid | bundle | feature | checkpoint)
    count     u64      number of records
    meta      u32 length + UTF-8 JSON  (config echo, labels, ...)
    records   count x kind-specific record

Record layouts (u32 header fields, then float64 payload unless noted):

    nurbs     n, m, |U|, |V| | i64 p, q, U, V, P (n*m*3), W (n*m)
    uvgrid    n, m, f64 domain[4] | points (n*m*3)
    bundle    d, k, n, m, |U|, |V| | p_w (d*d*4), U (k), V (k), u8 mask (d*d), record (9)
    feature   d_z, n, m, |U|, |V| | z, mu, log_var, record (9)
    tensor    u32-len name, ndim, shape... | values
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nurbs import NurbsSurface, UvGrid
from .preprocess import NormalizationRecord, PaddedBundle

__all__ = [
    "MAGIC",
    "VERSION",
    "FormatError",
    "CountMismatchError",
    "VersionMismatchError",
    "BadMagicError",
    "KindMismatchError",
    "FeatureRecord",
    "Corpus",
    "encode_record",
    "dumps",
    "loads",
    "write_corpus",
    "read_corpus",
    "write_checkpoint",
    "read_checkpoint",
    "write_report",
]

MAGIC = b"NNRB"
VERSION = 1
KINDS = ("nurbs", "uvgrid", "bundle", "feature", "checkpoint")


class FormatError(ValueError):
    pass


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class CountMismatchError(FormatError):
    pass


class KindMismatchError(FormatError):
    pass


@dataclass
class FeatureRecord:
    """Latent code plus the structure needed to decode it back to a surface."""

    z: np.ndarray
    mu: np.ndarray
    log_var: np.ndarray
    true_dims: tuple[int, int]
    true_knot_lens: tuple[int, int]
    record: NormalizationRecord = field(default_factory=NormalizationRecord.identity)


@dataclass
class Corpus:
    kind: str
    records: list
    meta: dict = field(default_factory=dict)


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _u32(*xs) -> bytes:
    return struct.pack(f"<{len(xs)}I", *xs)


def _str(s: str) -> bytes:
    b = s.encode("utf-8")
    return _u32(len(b)) + b


def encode_record(obj) -> bytes:
    if isinstance(obj, NurbsSurface):
        n, m = obj.dims
        return (
            _u32(n, m, obj.knots_u.size, obj.knots_v.size)
            + struct.pack("<2q", obj.degree_u, obj.degree_v)
            + _f64(obj.knots_u) + _f64(obj.knots_v)
            + _f64(obj.control_points) + _f64(obj.weights)
        )
    if isinstance(obj, UvGrid):
        n, m = obj.dims
        return _u32(n, m) + _f64(obj.domain) + _f64(obj.points)
    if isinstance(obj, PaddedBundle):
        return (
            _u32(obj.pad_dim, obj.knot_len, *obj.true_dims, *obj.true_knot_lens)
            + _f64(obj.p_w) + _f64(obj.knots_u) + _f64(obj.knots_v)
            + np.ascontiguousarray(obj.mask, dtype=np.uint8).tobytes()
            + _f64(obj.record.as_array())
        )
    if isinstance(obj, FeatureRecord):
        return (
            _u32(obj.z.size, *obj.true_dims, *obj.true_knot_lens)
            + _f64(obj.z) + _f64(obj.mu) + _f64(obj.log_var)
            + _f64(obj.record.as_array())
        )
    raise FormatError(f"no record layout for {type(obj).__name__}")


def _kind_of(obj) -> str:
    for kind, cls in (("nurbs", NurbsSurface), ("uvgrid", UvGrid),
                      ("bundle", PaddedBundle), ("feature", FeatureRecord)):
        if isinstance(obj, cls):
            return kind
    raise FormatError(f"no record layout for {type(obj).__name__}")


class _Reader:
    def __init__(self, data: bytes):
        self.buf = memoryview(data)
        self.pos = 0

    def take(self, size: int) -> memoryview:
        if self.pos + size > len(self.buf):
            raise EOFError
        out = self.buf[self.pos:self.pos + size]
        self.pos += size
        return out

    def u32(self, count=1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals if count > 1 else vals[0]

    def f64(self, count: int, shape=None) -> np.ndarray:
        a = np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)
        return a.reshape(shape) if shape is not None else a

    def string(self) -> str:
        return bytes(self.take(self.u32())).decode("utf-8")


def _decode_record(r: _Reader, kind: str, label: str = ""):
    if kind == "nurbs":
        n, m, lu, lv = r.u32(4)
        p, q = struct.unpack("<2q", r.take(16))
        ku, kv = r.f64(lu), r.f64(lv)
        cps = r.f64(n * m * 3, (n, m, 3))
        ws = r.f64(n * m, (n, m))
        return NurbsSurface(p, q, ku, kv, cps, ws, label=label)
    if kind == "uvgrid":
        n, m = r.u32(2)
        dom = tuple(r.f64(4))
        return UvGrid(r.f64(n * m * 3, (n, m, 3)), dom)
    if kind == "bundle":
        d, k, n, m, lu, lv = r.u32(6)
        pw = r.f64(d * d * 4, (d, d, 4))
        ku, kv = r.f64(k), r.f64(k)
        mask = np.frombuffer(r.take(d * d), dtype=np.uint8).reshape(d, d).astype(bool)
        rec = NormalizationRecord.from_array(r.f64(9))
        b = PaddedBundle(pw, ku, kv, mask, (n, m), (lu, lv), rec)
        b.check()
        return b
    if kind == "feature":
        dz, n, m, lu, lv = r.u32(5)
        z, mu, lv_ = r.f64(dz), r.f64(dz), r.f64(dz)
        rec = NormalizationRecord.from_array(r.f64(9))
        return FeatureRecord(z, mu, lv_, (n, m), (lu, lv), rec)
    if kind == "checkpoint":
        name = r.string()
        ndim = r.u32()
        shape = tuple(struct.unpack(f"<{ndim}I", r.take(4 * ndim))) if ndim else ()
        return name, r.f64(int(np.prod(shape, dtype=np.int64)), shape)
    raise FormatError(f"unknown record kind {kind!r}")


def dumps(kind: str, records, meta: dict | None = None) -> bytes:
    if kind not in KINDS:
        raise FormatError(f"unknown record kind {kind!r}")
    records = list(records)
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<H", VERSION))
    out.write(_str(kind))
    out.write(struct.pack("<Q", len(records)))
    out.write(_str(json.dumps(meta or {}, sort_keys=True)))
    for rec in records:
        if kind == "checkpoint":
            name, arr = rec
            arr = np.asarray(arr, dtype=np.float64)
            out.write(_str(name) + _u32(arr.ndim) + (_u32(*arr.shape) if arr.ndim else b"") + _f64(arr))
        else:
            if _kind_of(rec) != kind:
                raise KindMismatchError(f"{type(rec).__name__} record in a {kind} file")
            out.write(encode_record(rec))
    return out.getvalue()


def loads(data: bytes, expect_kind: str | None = None) -> Corpus:
    r = _Reader(data)
    try:
        if bytes(r.take(4)) != MAGIC:
            raise BadMagicError("not an NNRB file (bad magic)")
        (version,) = struct.unpack("<H", r.take(2))
        if version != VERSION:
            raise VersionMismatchError(f"file version {version}, reader supports {VERSION}")
        kind = r.string()
        (count,) = struct.unpack("<Q", r.take(8))
        meta = json.loads(r.string())
    except EOFError:
        raise CountMismatchError("file truncated inside header") from None
    if kind not in KINDS:
        raise FormatError(f"unknown record kind {kind!r}")
    if expect_kind is not None and kind != expect_kind:
        raise KindMismatchError(f"expected a {expect_kind} file, got {kind}")
    labels = meta.get("labels") or []
    records = []
    for i in range(count):
        try:
            label = labels[i] if i < len(labels) else ""
            records.append(_decode_record(r, kind, label))
        except EOFError:
            raise CountMismatchError(f"header declares {count} records, file holds {i}") from None
    if r.pos != len(r.buf):
        raise CountMismatchError(f"trailing bytes after {count} records")
    return Corpus(kind, records, meta)


def write_corpus(path, records, kind: str | None = None, meta: dict | None = None) -> int:
    records = list(records)
    if kind is None:
        if not records:
            raise FormatError("cannot infer kind of an empty corpus")
        kind = _kind_of(records[0])
    meta = dict(meta or {})
    if kind == "nurbs" and any(s.label for s in records):
        meta["labels"] = [s.label for s in records]
    data = dumps(kind, records, meta)
    Path(path).write_bytes(data)
    return len(data)


def read_corpus(path, expect_kind: str | None = None) -> Corpus:
    return loads(Path(path).read_bytes(), expect_kind)


def write_checkpoint(path, params: dict, config: dict, extra: dict | None = None) -> None:
    meta = {"config": config}
    if extra:
        meta.update(extra)
    Path(path).write_bytes(dumps("checkpoint", sorted(params.items()), meta))


def read_checkpoint(path) -> tuple[dict, dict, dict]:
    """Returns ``(params, config_dict, meta)``."""
    c = read_corpus(path, "checkpoint")
    return dict(c.records), c.meta["config"], c.meta


def write_report(stem, report: dict) -> tuple[Path, Path]:
    """Write ``<stem>.txt`` (key=value lines) and ``<stem>.json``."""
    stem = Path(stem)
    txt = stem.with_suffix(".txt")
    js = stem.with_suffix(".json")
    lines = [f"{k}={json.dumps(v) if isinstance(v, (dict, list)) else v}" for k, v in report.items()]
    txt.write_text("\n".join(lines) + "\n")
    js.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return txt, js
