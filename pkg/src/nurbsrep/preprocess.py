"""Normalization, padding and masking of NURBS parameters.

A surface is normalized into the unit cube (shared scale = largest axis
range), its weights are concatenated onto the control points, and the
result is zero-padded to a fixed ``(d, d, 4)`` tensor plus two length-``k``
knot sequences. ``to_model_range``/``from_model_range`` move the unmasked
entries between ``[0, 1]`` and ``[-1, 1]``. ``post_generation_repair`` turns
a decoded bundle back into something that unpacks to a valid surface.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .nurbs import NurbsError, NurbsSurface, infer_degrees

__all__ = [
    "PreprocessError",
    "DegenerateSurfaceError",
    "PreprocessConfig",
    "NormalizationRecord",
    "PaddedBundle",
    "normalize",
    "denormalize",
    "pack",
    "unpack",
    "open_bundle",
    "to_model_range",
    "from_model_range",
    "post_generation_repair",
    "scan_config",
    "WEIGHT_FLOOR",
    "KNOT_CLIP_TOL",
]

WEIGHT_FLOOR = 1e-4
KNOT_CLIP_TOL = 1e-9
RANGE_SLACK = 1e-9


class PreprocessError(ValueError):
    pass


class DegenerateSurfaceError(PreprocessError):
    """Raised when repaired parameters cannot form a surface."""


@dataclass(frozen=True)
class PreprocessConfig:
    pad_dim: int = 10
    knot_len: int = 10

    def __post_init__(self):
        if self.pad_dim < 2:
            raise PreprocessError("pad_dim must be >= 2")
        # the d=10, k=10 configuration is valid, so only a bilinear patch is required
        if self.knot_len < 4:
            raise PreprocessError("knot_len must be >= 4")


@dataclass(frozen=True)
class NormalizationRecord:
    mins: tuple[float, float, float]
    d_norm: float
    weight_scale: float
    knot_range_u: tuple[float, float] = (0.0, 1.0)
    knot_range_v: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if not self.d_norm > 0 or not self.weight_scale > 0:
            raise PreprocessError("normalization scales must be positive")
        for lo, hi in (self.knot_range_u, self.knot_range_v):
            if not hi > lo:
                raise PreprocessError("knot range must be nonempty")

    @classmethod
    def identity(cls) -> "NormalizationRecord":
        return cls((0.0, 0.0, 0.0), 1.0, 1.0)

    def as_array(self) -> np.ndarray:
        return np.array(
            [*self.mins, self.d_norm, self.weight_scale, *self.knot_range_u, *self.knot_range_v],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, a) -> "NormalizationRecord":
        a = [float(x) for x in a]
        return cls(tuple(a[0:3]), a[3], a[4], tuple(a[5:7]), tuple(a[7:9]))


def _unit_knots(knots):
    lo, hi = float(knots[0]), float(knots[-1])
    return (knots - lo) / (hi - lo), (lo, hi)


def normalize(surface: NurbsSurface) -> tuple[NurbsSurface, NormalizationRecord]:
    P = surface.control_points
    flat = P.reshape(-1, 3)
    mins = flat.min(axis=0)
    d_norm = float(np.max(flat.max(axis=0) - mins))
    if not d_norm > 0:
        raise PreprocessError("all control points coincide; cannot normalize")
    w_scale = float(surface.weights.max())
    ku, range_u = _unit_knots(surface.knots_u)
    kv, range_v = _unit_knots(surface.knots_v)
    normed = NurbsSurface(
        surface.degree_u,
        surface.degree_v,
        ku,
        kv,
        (P - mins) / d_norm,
        surface.weights / w_scale,
        label=surface.label,
    )
    record = NormalizationRecord(
        tuple(float(x) for x in mins), d_norm, w_scale, range_u, range_v
    )
    return normed, record


def denormalize(surface: NurbsSurface, record: NormalizationRecord) -> NurbsSurface:
    if not record.d_norm > 0 or not record.weight_scale > 0:
        raise PreprocessError("non-positive scale in normalization record")
    (u0, u1), (v0, v1) = record.knot_range_u, record.knot_range_v
    return NurbsSurface(
        surface.degree_u,
        surface.degree_v,
        u0 + surface.knots_u * (u1 - u0),
        v0 + surface.knots_v * (v1 - v0),
        surface.control_points * record.d_norm + np.asarray(record.mins),
        surface.weights * record.weight_scale,
        label=surface.label,
    )


@dataclass(frozen=True, eq=False)
class PaddedBundle:
    """Fixed-shape network input/output unit.

    ``p_w`` is ``(d, d, 4)``; the real control points live in the top-left
    ``true_dims`` block flagged by ``mask``. Knot sequences are valid over
    their first ``true_knot_lens`` entries and zero beyond.
    """

    p_w: np.ndarray
    knots_u: np.ndarray
    knots_v: np.ndarray
    mask: np.ndarray
    true_dims: tuple[int, int]
    true_knot_lens: tuple[int, int]
    record: NormalizationRecord = NormalizationRecord.identity()

    @property
    def pad_dim(self) -> int:
        return self.p_w.shape[0]

    @property
    def knot_len(self) -> int:
        return self.knots_u.shape[0]

    def knot_masks(self) -> tuple[np.ndarray, np.ndarray]:
        k = self.knot_len
        idx = np.arange(k)
        return idx < self.true_knot_lens[0], idx < self.true_knot_lens[1]

    def check(self) -> None:
        d, k = self.pad_dim, self.knot_len
        if self.p_w.shape != (d, d, 4) or self.mask.shape != (d, d):
            raise PreprocessError("p_w/mask shapes inconsistent")
        if self.knots_u.shape != (k,) or self.knots_v.shape != (k,):
            raise PreprocessError("knot sequences must share length k")
        n, m = self.true_dims
        if not (0 <= n <= d and 0 <= m <= d):
            raise PreprocessError("true_dims exceed pad size")
        block = np.zeros((d, d), dtype=bool)
        block[:n, :m] = True
        if not np.array_equal(block, self.mask):
            raise PreprocessError("mask is not the top-left true_dims block")
        lu, lv = self.true_knot_lens
        if not (0 <= lu <= k and 0 <= lv <= k):
            raise PreprocessError("true knot lengths exceed k")


def _block_mask(d, n, m):
    mask = np.zeros((d, d), dtype=bool)
    mask[:n, :m] = True
    return mask


def pack(surface: NurbsSurface, config: PreprocessConfig,
         record: NormalizationRecord | None = None) -> PaddedBundle:
    d, k = config.pad_dim, config.knot_len
    n, m = surface.dims
    lu, lv = surface.knots_u.size, surface.knots_v.size
    for name, val, lim in (("n", n, d), ("m", m, d), ("|U|", lu, k), ("|V|", lv, k)):
        if val > lim:
            raise PreprocessError(f"surface {name}={val} exceeds pad limit {lim}")
    p_w = np.zeros((d, d, 4))
    p_w[:n, :m, :3] = surface.control_points
    p_w[:n, :m, 3] = surface.weights
    ku = np.zeros(k)
    kv = np.zeros(k)
    ku[:lu] = surface.knots_u
    kv[:lv] = surface.knots_v
    return PaddedBundle(
        p_w, ku, kv, _block_mask(d, n, m), (n, m), (lu, lv),
        record if record is not None else NormalizationRecord.identity(),
    )


def unpack(bundle: PaddedBundle, label: str = "") -> NurbsSurface:
    bundle.check()
    n, m = bundle.true_dims
    lu, lv = bundle.true_knot_lens
    try:
        p, q = infer_degrees((lu, lv), (n, m))
        return NurbsSurface(
            p, q,
            bundle.knots_u[:lu].copy(),
            bundle.knots_v[:lv].copy(),
            bundle.p_w[:n, :m, :3].copy(),
            bundle.p_w[:n, :m, 3].copy(),
            label=label,
        )
    except NurbsError as exc:
        raise PreprocessError(f"bundle does not unpack to a surface: {exc}") from exc


def open_bundle(p_w, knots_u, knots_v,
                record: NormalizationRecord | None = None) -> PaddedBundle:
    """Wrap raw decoded tensors with no structural prior (everything active)."""
    p_w = np.asarray(p_w, dtype=np.float64)
    d, k = p_w.shape[0], np.shape(knots_u)[0]
    return PaddedBundle(
        p_w, np.asarray(knots_u, dtype=np.float64), np.asarray(knots_v, dtype=np.float64),
        np.ones((d, d), dtype=bool), (d, d), (k, k),
        record if record is not None else NormalizationRecord.identity(),
    )


def _affine(bundle: PaddedBundle, scale: float, shift: float, lo: float, hi: float) -> PaddedBundle:
    bundle.check()
    mu, mv = bundle.knot_masks()
    active = [bundle.p_w[bundle.mask], bundle.knots_u[mu], bundle.knots_v[mv]]
    for arr in active:
        if arr.size and (arr.min() < lo - RANGE_SLACK or arr.max() > hi + RANGE_SLACK):
            raise PreprocessError(f"entries outside [{lo}, {hi}]")
    p_w = np.zeros_like(bundle.p_w)
    p_w[bundle.mask] = bundle.p_w[bundle.mask] * scale + shift
    ku = np.zeros_like(bundle.knots_u)
    kv = np.zeros_like(bundle.knots_v)
    ku[mu] = bundle.knots_u[mu] * scale + shift
    kv[mv] = bundle.knots_v[mv] * scale + shift
    return replace(bundle, p_w=p_w, knots_u=ku, knots_v=kv)


def to_model_range(bundle: PaddedBundle) -> PaddedBundle:
    return _affine(bundle, 2.0, -1.0, 0.0, 1.0)


def from_model_range(bundle: PaddedBundle) -> PaddedBundle:
    return _affine(bundle, 0.5, 0.5, -1.0, 1.0)


def _repair_knots(seq: np.ndarray, count: int, axis: str, infer_length: bool) -> np.ndarray:
    """Clip a decoded knot sequence at its first value reaching 1.

    The sequence is made nondecreasing and cut at the first entry
    ``>= 1 - KNOT_CLIP_TOL`` (the final entry if none reaches 1), which is
    set to exactly 1. The clamped end is then completed with extra 1s:
    up to the carried length, or, with ``infer_length``, up to the
    multiplicity of the leading knot so the degree is re-derived from the
    truncated length.
    """
    out = np.maximum.accumulate(np.clip(seq, 0.0, None))
    hits = np.flatnonzero(out >= 1.0 - KNOT_CLIP_TOL)
    t = int(hits[0]) if hits.size else out.size - 1
    if infer_length:
        lead = int(np.count_nonzero(out[: t + 1] == out[0]))
        length = min(t + 1 + max(lead - 1, 0), out.size)
    else:
        length = out.size
    out = out[:length].copy()
    out[t:] = 1.0
    deg = length - count - 1
    if deg < 1 or deg >= count:
        raise DegenerateSurfaceError(
            f"{axis}: {length} knots cannot support {count} control points"
        )
    if not out[deg] < out[count]:
        raise DegenerateSurfaceError(f"{axis}: repaired knots leave an empty span")
    return out


def post_generation_repair(bundle: PaddedBundle, infer_lengths: bool = False) -> PaddedBundle:
    """Make a decoded ``[0, 1]``-range bundle unpack to a valid surface.

    Rows/columns of the active block whose weights are all <= 0 are dropped
    (the grid is compacted); other non-positive weights are raised to
    ``WEIGHT_FLOOR``. Knot sequences are clipped at their first entry >= 1.
    By default the bundle's ``true_knot_lens`` are kept (minus one per
    dropped row/column), so degrees survive; ``infer_lengths=True`` derives
    the lengths from the clipped sequences instead, for bundles decoded
    without structural information (see :func:`open_bundle`).

    Raises :class:`DegenerateSurfaceError` when fewer than two control
    points survive in a direction or the knots cannot support the grid.
    """
    bundle.check()
    d, k = bundle.pad_dim, bundle.knot_len
    n, m = bundle.true_dims
    lu, lv = bundle.true_knot_lens
    block = bundle.p_w[:n, :m]
    if not np.all(np.isfinite(block)) or not (
        np.all(np.isfinite(bundle.knots_u)) and np.all(np.isfinite(bundle.knots_v))
    ):
        raise DegenerateSurfaceError("non-finite decoded values")
    alive = block[:, :, 3] > 0
    rows = np.flatnonzero(alive.any(axis=1))
    cols = np.flatnonzero(alive.any(axis=0))
    if rows.size < 2 or cols.size < 2:
        raise DegenerateSurfaceError(
            f"only {rows.size}x{cols.size} control points survive weight removal"
        )
    kept = block[np.ix_(rows, cols)].copy()
    kept[:, :, 3] = np.where(kept[:, :, 3] > 0, kept[:, :, 3], WEIGHT_FLOOR)
    n2, m2 = rows.size, cols.size
    if infer_lengths:
        ku = _repair_knots(bundle.knots_u[:lu], n2, "u", True)
        kv = _repair_knots(bundle.knots_v[:lv], m2, "v", True)
    else:
        # a dropped row/column shortens the knot vector by one to keep the degree
        ku = _repair_knots(bundle.knots_u[: lu - (n - n2)], n2, "u", False)
        kv = _repair_knots(bundle.knots_v[: lv - (m - m2)], m2, "v", False)

    p_w = np.zeros((d, d, 4))
    p_w[:n2, :m2] = kept
    out_u = np.zeros(k)
    out_v = np.zeros(k)
    out_u[: ku.size] = ku
    out_v[: kv.size] = kv
    return PaddedBundle(p_w, out_u, out_v, _block_mask(d, n2, m2), (n2, m2),
                        (ku.size, kv.size), bundle.record)


def scan_config(surfaces) -> PreprocessConfig:
    """Smallest config that fits every surface of a corpus."""
    d = max(max(s.dims) for s in surfaces)
    k = max(max(s.knots_u.size, s.knots_v.size) for s in surfaces)
    return PreprocessConfig(max(d, 2), max(k, 4))
