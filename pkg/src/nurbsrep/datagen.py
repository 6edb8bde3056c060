"""Deterministic synthetic NURBS corpora.

Four families stand in for CAD-exported surfaces:

* ``plane``     bilinear 2x2 patches on a random plane
* ``ruled``     a random clamped curve swept linearly (degree 1 in V)
* ``smooth``    clamped patches of degree >= 3 over a jittered control grid
* ``cylinder``  a rational quadratic circular arc extruded along its axis
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nurbs import NurbsSurface
from .preprocess import PreprocessConfig, normalize

__all__ = [
    "FAMILIES",
    "CorpusSpec",
    "DatagenError",
    "generate",
    "deduplicate",
    "random_rotation",
    "make_plane",
    "make_ruled",
    "make_smooth",
    "make_cylinder_segment",
]

FAMILIES = ("plane", "ruled", "smooth", "cylinder")


class DatagenError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusSpec:
    counts: dict = field(default_factory=lambda: {"plane": 10, "ruled": 10, "smooth": 10, "cylinder": 10})
    pad_dim: int = 10
    knot_len: int = 10
    ctrl_range: tuple[int, int] = (4, 6)
    degree_range: tuple[int, int] = (3, 4)
    ruled_degree_range: tuple[int, int] = (2, 3)
    arc_angle_deg: tuple[float, float] = (30.0, 150.0)
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.counts) - set(FAMILIES)
        if unknown:
            raise DatagenError(f"unknown families: {sorted(unknown)}")
        if any(c < 0 for c in self.counts.values()) or not any(self.counts.values()):
            raise DatagenError("family counts must be >= 0 with at least one nonzero")
        PreprocessConfig(self.pad_dim, self.knot_len)


def clamped_knots(rng, num_ctrl: int, degree: int, uniform: bool = False) -> np.ndarray:
    inner = num_ctrl - degree - 1
    if uniform or inner == 0:
        interior = np.linspace(0.0, 1.0, inner + 2)[1:-1]
    else:
        # spread interior knots but keep them distinct
        gaps = rng.uniform(0.5, 1.5, inner + 1)
        interior = np.cumsum(gaps)[:-1] / gaps.sum()
    return np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])


def random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def _place(rng, pts: np.ndarray) -> np.ndarray:
    R = random_rotation(rng)
    scale = rng.uniform(0.5, 5.0)
    return pts @ R.T * scale + rng.uniform(-10, 10, 3)


def make_plane(rng) -> NurbsSurface:
    w, h = rng.uniform(0.5, 2.0, 2)
    local = np.array([[[0, 0, 0], [0, h, 0]], [[w, 0, 0], [w, h, 0]]], dtype=float)
    cps = _place(rng, local.reshape(-1, 3)).reshape(2, 2, 3)
    k = np.array([0.0, 0.0, 1.0, 1.0])
    return NurbsSurface(1, 1, k, k.copy(), cps, np.ones((2, 2)), label="plane")


def make_ruled(rng, num_ctrl: int, degree: int) -> NurbsSurface:
    t = np.linspace(0, 1, num_ctrl)
    curve = np.stack([2.0 * t, rng.uniform(-0.4, 0.4, num_ctrl), rng.uniform(-0.4, 0.4, num_ctrl)], axis=1)
    sweep = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.2), 1.0]) * rng.uniform(0.5, 2.0)
    local = np.stack([curve, curve + sweep], axis=1)
    cps = _place(rng, local.reshape(-1, 3)).reshape(num_ctrl, 2, 3)
    return NurbsSurface(
        degree, 1, clamped_knots(rng, num_ctrl, degree), np.array([0.0, 0.0, 1.0, 1.0]),
        cps, np.ones((num_ctrl, 2)), label="ruled",
    )


def make_smooth(rng, n: int, m: int, p: int, q: int) -> NurbsSurface:
    gu, gv = np.meshgrid(np.linspace(0, 1, n), np.linspace(0, 1, m), indexing="ij")
    # in-plane jitter below half the spacing keeps the control net embedded
    ju = rng.uniform(-0.3, 0.3, (n, m)) / (n - 1)
    jv = rng.uniform(-0.3, 0.3, (n, m)) / (m - 1)
    z = 0.25 * rng.uniform(-1, 1, (n, m))
    local = np.stack([gu + ju, gv + jv, z], axis=-1)
    cps = _place(rng, local.reshape(-1, 3)).reshape(n, m, 3)
    return NurbsSurface(
        p, q, clamped_knots(rng, n, p), clamped_knots(rng, m, q),
        cps, np.ones((n, m)), label="smooth",
    )


def make_cylinder_segment(theta: float, radius: float, height: float,
                          rotation: np.ndarray | None = None,
                          origin=(0.0, 0.0, 0.0)) -> NurbsSurface:
    """Arc of angle ``theta`` (< pi) around the local z axis, extruded by ``height``."""
    if not 0 < theta < np.pi:
        raise DatagenError("single-segment arc needs 0 < theta < pi")
    half = theta / 2
    arc = radius * np.array([
        [1.0, 0.0, 0.0],
        [1.0, np.tan(half), 0.0],
        [np.cos(theta), np.sin(theta), 0.0],
    ])
    local = np.stack([arc, arc + [0.0, 0.0, height]], axis=1)  # (3, 2, 3)
    R = np.eye(3) if rotation is None else rotation
    cps = local @ R.T + np.asarray(origin, dtype=float)
    w = np.array([1.0, np.cos(half), 1.0])
    return NurbsSurface(
        2, 1, np.array([0, 0, 0, 1, 1, 1.0]), np.array([0, 0, 1, 1.0]),
        cps, np.repeat(w[:, None], 2, axis=1), label="cylinder",
    )


def _fit_limits(spec: CorpusSpec, degree: int) -> int:
    return min(spec.pad_dim, spec.knot_len - degree - 1)


def generate(spec: CorpusSpec) -> list[NurbsSurface]:
    """Surfaces in family order; identical output for identical specs."""
    rng = np.random.default_rng(spec.seed)
    d, k = spec.pad_dim, spec.knot_len
    out: list[NurbsSurface] = []
    cmin, cmax = spec.ctrl_range
    for family in FAMILIES:
        count = spec.counts.get(family, 0)
        if family == "plane" and count:
            if d < 2 or k < 4:
                raise DatagenError("planes need d >= 2, k >= 4")
            out.extend(make_plane(rng) for _ in range(count))
        elif family == "cylinder" and count:
            if d < 3 or k < 6:
                raise DatagenError("cylinder segments need d >= 3, k >= 6")
            lo, hi = np.radians(spec.arc_angle_deg)
            for _ in range(count):
                out.append(make_cylinder_segment(
                    rng.uniform(lo, hi), rng.uniform(0.5, 3.0), rng.uniform(0.5, 4.0),
                    random_rotation(rng), rng.uniform(-10, 10, 3),
                ))
        elif family == "ruled" and count:
            dmin, dmax = spec.ruled_degree_range
            for _ in range(count):
                p = int(rng.integers(dmin, dmax + 1))
                hi = min(cmax, _fit_limits(spec, p))
                lo = max(cmin, p + 1)
                if hi < lo:
                    raise DatagenError(f"ruled degree {p} does not fit d={d}, k={k}")
                out.append(make_ruled(rng, int(rng.integers(lo, hi + 1)), p))
        elif family == "smooth" and count:
            dmin, dmax = spec.degree_range
            if dmin < 3:
                raise DatagenError("smooth family degrees must be >= 3")
            for _ in range(count):
                p, q = (int(x) for x in rng.integers(dmin, dmax + 1, 2))
                dims = []
                for deg in (p, q):
                    hi = min(cmax, _fit_limits(spec, deg))
                    lo = max(cmin, deg + 1)
                    if hi < lo:
                        raise DatagenError(f"smooth degree {deg} does not fit d={d}, k={k}")
                    dims.append(int(rng.integers(lo, hi + 1)))
                out.append(make_smooth(rng, dims[0], dims[1], p, q))
    return out


def deduplicate(surfaces) -> list[NurbsSurface]:
    """Drop surfaces whose normalized parameters exactly repeat an earlier one."""
    seen = set()
    out = []
    for s in surfaces:
        ns, _ = normalize(s)
        key = (
            ns.degrees, ns.dims,
            ns.knots_u.tobytes(), ns.knots_v.tobytes(),
            ns.control_points.tobytes(), ns.weights.tobytes(),
        )
        if key not in seen:
            seen.add(key)
            out.append(s)
    return out
