"""Exact NURBS / B-spline evaluation.

Basis functions follow the Cox-de Boor recursion with the 0/0 := 0
convention. Half-open spans ``[u_i, u_{i+1})`` are used everywhere except at
the right end of the domain, where the last nonempty span is closed so that
clamped curves and surfaces interpolate their final control points.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NurbsError",
    "NurbsCurve",
    "NurbsSurface",
    "UvGrid",
    "PointCloud",
    "check_knots",
    "basis_functions",
    "basis_matrix",
    "curve_eval",
    "surface_eval",
    "surface_eval_many",
    "infer_degrees",
    "sample_uv_grid",
    "sample_point_cloud",
    "is_clamped",
]


class NurbsError(ValueError):
    """Invalid NURBS parameters or evaluation request."""


def check_knots(knots) -> np.ndarray:
    knots = np.asarray(knots, dtype=np.float64)
    if knots.ndim != 1 or knots.size < 2:
        raise NurbsError("knot vector needs at least 2 entries")
    if not np.all(np.isfinite(knots)):
        raise NurbsError("knot vector has non-finite entries")
    if np.any(np.diff(knots) < 0):
        raise NurbsError("knot vector is not nondecreasing")
    if not knots[0] < knots[-1]:
        raise NurbsError("knot vector spans an empty range")
    return knots


def basis_matrix(knots, degree: int, us) -> np.ndarray:
    """Evaluate all ``len(knots) - degree - 1`` basis functions at each of ``us``.

    Returns an array of shape ``(len(us), n)``.
    """
    knots = check_knots(knots)
    if degree < 0:
        raise NurbsError(f"degree must be nonnegative, got {degree}")
    nb = knots.size - degree - 1
    if nb < 1:
        raise NurbsError(
            f"{knots.size} knots cannot carry a degree-{degree} basis"
        )
    us = np.atleast_1d(np.asarray(us, dtype=np.float64))
    lo, hi = knots[0], knots[-1]
    if np.any(us < lo) or np.any(us > hi) or not np.all(np.isfinite(us)):
        raise NurbsError(f"parameter outside knot range [{lo}, {hi}]")

    left, right = knots[:-1], knots[1:]
    N = ((us[:, None] >= left) & (us[:, None] < right)).astype(np.float64)
    # close the last nonempty span on the right
    last = np.flatnonzero(left < right)[-1]
    N[us == hi, last] = 1.0

    for p in range(1, degree + 1):
        count = knots.size - p - 1
        a0, a1 = knots[:count], knots[p:p + count]
        b0, b1 = knots[1:count + 1], knots[p + 1:p + 1 + count]
        den_a = a1 - a0
        den_b = b1 - b0
        with np.errstate(divide="ignore", invalid="ignore"):
            fa = np.where(den_a > 0, (us[:, None] - a0) / den_a, 0.0)
            fb = np.where(den_b > 0, (b1 - us[:, None]) / den_b, 0.0)
        N = fa * N[:, :count] + fb * N[:, 1:count + 1]
    return N


def basis_functions(knots, degree: int, u: float) -> np.ndarray:
    """Values of every degree-``degree`` basis function at a single ``u``."""
    return basis_matrix(knots, degree, [u])[0]


def is_clamped(knots, degree: int) -> bool:
    knots = np.asarray(knots, dtype=np.float64)
    return bool(
        np.all(knots[: degree + 1] == knots[0])
        and np.all(knots[-degree - 1:] == knots[-1])
    )


@dataclass(frozen=True, eq=False)
class NurbsCurve:
    degree: int
    knots: np.ndarray
    control_points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        knots = check_knots(self.knots)
        cps = np.asarray(self.control_points, dtype=np.float64)
        ws = np.asarray(self.weights, dtype=np.float64)
        if cps.ndim != 2 or cps.shape[1] != 3:
            raise NurbsError("control points must have shape (n, 3)")
        n = cps.shape[0]
        if knots.size != n + self.degree + 1:
            raise NurbsError(
                f"|knots|={knots.size} but n+p+1={n + self.degree + 1}"
            )
        if ws.shape != (n,):
            raise NurbsError("one weight per control point required")
        if not np.all(ws > 0):
            raise NurbsError("weights must be positive")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "control_points", cps)
        object.__setattr__(self, "weights", ws)

    @property
    def domain(self) -> tuple[float, float]:
        n = self.control_points.shape[0]
        return float(self.knots[self.degree]), float(self.knots[n])


def _check_in_domain(t, lo, hi, name):
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < lo) or np.any(t > hi) or not np.all(np.isfinite(t)):
        raise NurbsError(f"{name} outside valid span [{lo}, {hi}]")


def _rational_blend(N, weights, points):
    # N: (k, n) basis rows; weights: (n,); points: (n, 3)
    den = N @ weights
    if np.any(den <= 0):
        raise NurbsError("zero rational denominator")
    return (N @ (weights[:, None] * points)) / den[:, None]


def curve_eval(curve: NurbsCurve, u: float) -> np.ndarray:
    lo, hi = curve.domain
    _check_in_domain(u, lo, hi, "u")
    N = basis_matrix(curve.knots, curve.degree, [u])
    return _rational_blend(N, curve.weights, curve.control_points)[0]


@dataclass(frozen=True, eq=False)
class NurbsSurface:
    """Tensor-product NURBS surface.

    ``control_points`` has shape ``(n, m, 3)`` with the first index running
    along U; ``weights`` has shape ``(n, m)``.
    """

    degree_u: int
    degree_v: int
    knots_u: np.ndarray
    knots_v: np.ndarray
    control_points: np.ndarray
    weights: np.ndarray
    label: str = field(default="", compare=False)

    def __post_init__(self):
        ku = check_knots(self.knots_u)
        kv = check_knots(self.knots_v)
        cps = np.asarray(self.control_points, dtype=np.float64)
        ws = np.asarray(self.weights, dtype=np.float64)
        if cps.ndim != 3 or cps.shape[2] != 3:
            raise NurbsError("control points must have shape (n, m, 3)")
        if not np.all(np.isfinite(cps)):
            raise NurbsError("control points must be finite")
        n, m = cps.shape[:2]
        p, q = int(self.degree_u), int(self.degree_v)
        if p < 0 or q < 0:
            raise NurbsError("degrees must be nonnegative")
        if n < p + 1 or m < q + 1:
            raise NurbsError(f"grid {n}x{m} too small for degrees ({p}, {q})")
        if ku.size != n + p + 1:
            raise NurbsError(f"|U|={ku.size} but n+p+1={n + p + 1}")
        if kv.size != m + q + 1:
            raise NurbsError(f"|V|={kv.size} but m+q+1={m + q + 1}")
        if ws.shape != (n, m):
            raise NurbsError("weight grid must match control grid")
        if not np.all(ws > 0) or not np.all(np.isfinite(ws)):
            raise NurbsError("weights must be positive and finite")
        if not (ku[p] < ku[n] and kv[q] < kv[m]):
            raise NurbsError("empty valid parameter span")
        object.__setattr__(self, "degree_u", p)
        object.__setattr__(self, "degree_v", q)
        object.__setattr__(self, "knots_u", ku)
        object.__setattr__(self, "knots_v", kv)
        object.__setattr__(self, "control_points", cps)
        object.__setattr__(self, "weights", ws)

    @property
    def dims(self) -> tuple[int, int]:
        return self.control_points.shape[0], self.control_points.shape[1]

    @property
    def degrees(self) -> tuple[int, int]:
        return self.degree_u, self.degree_v

    @property
    def domain(self) -> tuple[float, float, float, float]:
        """Valid parameter span; the full knot range for clamped knots."""
        n, m = self.dims
        return (
            float(self.knots_u[self.degree_u]),
            float(self.knots_u[n]),
            float(self.knots_v[self.degree_v]),
            float(self.knots_v[m]),
        )

    def validity_report(self) -> dict:
        return {
            "clamped_u": is_clamped(self.knots_u, self.degree_u),
            "clamped_v": is_clamped(self.knots_v, self.degree_v),
            "rational": bool(np.ptp(self.weights) > 0),
        }

    def same_parameters(self, other: "NurbsSurface", tol: float = 0.0) -> bool:
        if self.degrees != other.degrees or self.dims != other.dims:
            return False
        if self.knots_u.size != other.knots_u.size:
            return False
        if self.knots_v.size != other.knots_v.size:
            return False
        pairs = [
            (self.knots_u, other.knots_u),
            (self.knots_v, other.knots_v),
            (self.control_points, other.control_points),
            (self.weights, other.weights),
        ]
        return all(np.max(np.abs(a - b)) <= tol for a, b in pairs)


def surface_eval_many(surface: NurbsSurface, us, vs) -> np.ndarray:
    """Evaluate at paired parameters ``(us[k], vs[k])``; returns ``(K, 3)``."""
    u0, u1, v0, v1 = surface.domain
    _check_in_domain(us, u0, u1, "u")
    _check_in_domain(vs, v0, v1, "v")
    Nu = basis_matrix(surface.knots_u, surface.degree_u, us)
    Nv = basis_matrix(surface.knots_v, surface.degree_v, vs)
    W = surface.weights
    WP = W[:, :, None] * surface.control_points
    den = np.einsum("ki,ij,kj->k", Nu, W, Nv)
    if np.any(den <= 0):
        raise NurbsError("zero rational denominator")
    num = np.einsum("ki,ijc,kj->kc", Nu, WP, Nv)
    return num / den[:, None]


def surface_eval(surface: NurbsSurface, u: float, v: float) -> np.ndarray:
    return surface_eval_many(surface, [u], [v])[0]


def _grid_eval(surface: NurbsSurface, us, vs) -> np.ndarray:
    Nu = basis_matrix(surface.knots_u, surface.degree_u, us)
    Nv = basis_matrix(surface.knots_v, surface.degree_v, vs)
    W = surface.weights
    den = Nu @ W @ Nv.T
    if np.any(den <= 0):
        raise NurbsError("zero rational denominator")
    num = np.einsum("ai,ijc,bj->abc", Nu, W[:, :, None] * surface.control_points, Nv)
    return num / den[:, :, None]


def infer_degrees(knot_lengths: tuple[int, int], grid_dims: tuple[int, int]) -> tuple[int, int]:
    """Degrees implied by knot-vector lengths: ``p = |U| - n - 1``."""
    out = []
    for length, count, axis in zip(knot_lengths, grid_dims, "uv"):
        deg = int(length) - int(count) - 1
        if deg < 1 or deg >= count:
            raise NurbsError(
                f"inconsistent {axis}-direction: |knots|={length}, "
                f"{count} control points give degree {deg}"
            )
        out.append(deg)
    return out[0], out[1]


@dataclass(frozen=True, eq=False)
class UvGrid:
    points: np.ndarray  # (n, m, 3)
    domain: tuple[float, float, float, float]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise NurbsError("grid points must have shape (n, m, 3)")
        if pts.shape[0] < 2 or pts.shape[1] < 2:
            raise NurbsError("UV-grid needs at least 2x2 samples")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "domain", tuple(float(x) for x in self.domain))

    @property
    def dims(self) -> tuple[int, int]:
        return self.points.shape[0], self.points.shape[1]

    def parameters(self) -> tuple[np.ndarray, np.ndarray]:
        u0, u1, v0, v1 = self.domain
        n, m = self.dims
        return np.linspace(u0, u1, n), np.linspace(v0, v1, m)


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray  # (K, 3)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]


def sample_uv_grid(surface: NurbsSurface, n: int, m: int) -> UvGrid:
    if n < 2 or m < 2:
        raise NurbsError("UV-grid needs n, m >= 2")
    u0, u1, v0, v1 = surface.domain
    us = np.linspace(u0, u1, n)
    vs = np.linspace(v0, v1, m)
    return UvGrid(_grid_eval(surface, us, vs), (u0, u1, v0, v1))


def sample_point_cloud(surface: NurbsSurface, count: int, rng_seed: int) -> PointCloud:
    if count < 1:
        raise NurbsError("count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    u0, u1, v0, v1 = surface.domain
    us = rng.uniform(u0, u1, count)
    vs = rng.uniform(v0, v1, count)
    return PointCloud(surface_eval_many(surface, us, vs))
