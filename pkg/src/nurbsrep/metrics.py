"""Point-cloud and corpus metrics: Chamfer, MMD, coverage, JSD, degree
histograms, serialized sizes and construction throughput."""
from __future__ import annotations

import os
import statistics
import time
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .nurbs import NurbsSurface, PointCloud, UvGrid

__all__ = [
    "MetricError",
    "MetricReport",
    "chamfer",
    "chamfer_matrix",
    "mmd",
    "coverage",
    "occupancy_histogram",
    "jsd",
    "normalize_cloud_sets",
    "degree_histogram",
    "format_degree_table",
    "serialized_size",
    "bench_construction",
    "metric_report",
    "worker_count",
]


class MetricError(ValueError):
    pass


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("NNRB_THREADS", "1")))
    except ValueError:
        return 1


def _pts(c) -> np.ndarray:
    pts = c.points if isinstance(c, PointCloud) else np.asarray(c, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise MetricError("empty point cloud")
    return pts


def _nn_sq(a: np.ndarray, b: np.ndarray, tree: cKDTree | None = None) -> np.ndarray:
    """Squared distance from each point of ``a`` to its nearest point of ``b``.

    The tree only selects the neighbour; the distance is recomputed as
    ``dx*dx + dy*dy + dz*dz`` so values agree bitwise with a brute-force scan.
    """
    tree = cKDTree(b) if tree is None else tree
    # two candidates guard against near-ties the tree resolves differently
    k = min(2, b.shape[0])
    _, idx = tree.query(a, k=k, workers=worker_count())
    idx = idx.reshape(a.shape[0], k)
    diff = a[:, None, :] - b[idx]
    sq = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
    return sq.min(axis=1)


def chamfer(a, b) -> float:
    """Mean squared nearest-neighbour distance, summed over both directions."""
    pa, pb = _pts(a), _pts(b)
    return float(np.mean(_nn_sq(pa, pb)) + np.mean(_nn_sq(pb, pa)))


def chamfer_matrix(generated, test) -> np.ndarray:
    """``D[i, j] = chamfer(test[i], generated[j])``."""
    gen = [_pts(c) for c in generated]
    tst = [_pts(c) for c in test]
    if not gen or not tst:
        raise MetricError("empty cloud set")
    gtrees = [cKDTree(g) for g in gen]
    ttrees = [cKDTree(t) for t in tst]
    D = np.empty((len(tst), len(gen)))
    for i, t in enumerate(tst):
        for j, g in enumerate(gen):
            D[i, j] = np.mean(_nn_sq(t, g, gtrees[j])) + np.mean(_nn_sq(g, t, ttrees[i]))
    return D


def mmd(generated, test, D: np.ndarray | None = None) -> float:
    """Mean over test clouds of the Chamfer distance to the closest generated cloud."""
    D = chamfer_matrix(generated, test) if D is None else D
    return float(np.mean(D.min(axis=1)))


def coverage(generated, test, D: np.ndarray | None = None) -> float:
    """Fraction of test clouds that are the nearest test cloud of some generated cloud."""
    D = chamfer_matrix(generated, test) if D is None else D
    nearest = np.argmin(D, axis=0)
    return len(set(nearest.tolist())) / D.shape[0]


def occupancy_histogram(clouds, resolution: int) -> np.ndarray:
    if resolution < 2:
        raise MetricError("resolution must be >= 2")
    pts = np.concatenate([_pts(c) for c in clouds])
    if pts.min() < -1e-9 or pts.max() > 1 + 1e-9:
        raise MetricError("points outside the unit cube; normalize clouds first")
    idx = np.clip(np.floor(pts * resolution).astype(np.int64), 0, resolution - 1)
    flat = (idx[:, 0] * resolution + idx[:, 1]) * resolution + idx[:, 2]
    hist = np.bincount(flat, minlength=resolution ** 3).astype(np.float64)
    return hist / hist.sum()


def _jsd_hist(p: np.ndarray, q: np.ndarray) -> float:
    m = 0.5 * (p + q)
    kp = np.sum(p[p > 0] * np.log(p[p > 0] / m[p > 0]))
    kq = np.sum(q[q > 0] * np.log(q[q > 0] / m[q > 0]))
    return float(min(max(0.5 * (kp + kq), 0.0), np.log(2.0)))


def jsd(generated, test, resolution: int = 28) -> float:
    """Jensen-Shannon divergence (nats) between pooled voxel occupancies."""
    return _jsd_hist(occupancy_histogram(generated, resolution), occupancy_histogram(test, resolution))


def normalize_cloud_sets(*sets):
    """Map every cloud of every set into the unit cube with one shared transform."""
    allpts = np.concatenate([_pts(c) for s in sets for c in s])
    lo = allpts.min(axis=0)
    scale = float(np.max(allpts.max(axis=0) - lo)) or 1.0
    return [[PointCloud((_pts(c) - lo) / scale) for c in s] for s in sets]


ORDER_BUCKETS = ("2", "3", "4", ">=5")
DEGREE_BUCKETS = ("1", "2", "3", "4", ">=5")


def _bucket(value: int, buckets) -> str:
    lo = int(buckets[0])
    top = int(buckets[-1][2:])
    if value >= top:
        return buckets[-1]
    return str(max(value, lo))


def degree_histogram(corpus) -> dict:
    """Percentages per direction in two conventions.

    ``"order"`` buckets ``degree + 1`` into 2, 3, 4, >=5 (values below 2 fall
    in the first bucket); ``"degree"`` buckets the polynomial degree into
    1, 2, 3, 4, >=5.
    """
    corpus = list(corpus)
    if not corpus:
        raise MetricError("empty corpus")
    out = {}
    for conv, buckets, shift in (("order", ORDER_BUCKETS, 1), ("degree", DEGREE_BUCKETS, 0)):
        table = {}
        for axis in ("u", "v"):
            counts = Counter(
                _bucket((s.degree_u if axis == "u" else s.degree_v) + shift, buckets) for s in corpus
            )
            table[axis] = {b: 100.0 * counts.get(b, 0) / len(corpus) for b in buckets}
        out[conv] = table
    out["count"] = len(corpus)
    return out


def format_degree_table(hist: dict) -> str:
    lines = []
    for conv in ("order", "degree"):
        buckets = list(hist[conv]["u"])
        lines.append(f"[{conv}] " + " ".join(f"{b:>8}" for b in buckets))
        for axis in ("u", "v"):
            row = " ".join(f"{hist[conv][axis][b]:7.2f}%" for b in buckets)
            lines.append(f"{axis.upper():>{len(conv) + 2}} " + row)
    return "\n".join(lines)


def serialized_size(obj) -> int:
    """Bytes of the canonical binary record for a surface or UV-grid."""
    from .formats import encode_record

    return len(encode_record(obj))


def bench_construction(stored, grids, repetitions: int = 5, warmup: int = 1) -> tuple[float, float]:
    """Throughputs (surfaces/s) of the two construction routes.

    ``stored`` holds ``(normalized_surface, NormalizationRecord)`` pairs that
    are turned into model-space surfaces; ``grids`` are fitted with
    :func:`~nurbsrep.fitting.default_fit`. Rates use the median of
    ``repetitions`` wall-clock runs.
    """
    from .fitting import default_fit
    from .preprocess import denormalize

    stored = list(stored)
    grids = list(grids)
    if len(stored) != len(grids) or not stored:
        raise MetricError("corpora must be nonempty and aligned")

    def run_nurbs():
        for s, rec in stored:
            denormalize(s, rec)

    def run_grids():
        for g in grids:
            default_fit(g)

    rates = []
    for fn in (run_nurbs, run_grids):
        for _ in range(warmup):
            fn()
        times = []
        for _ in range(max(5, repetitions)):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        rates.append(len(stored) / statistics.median(times))
    return rates[0], rates[1]


@dataclass
class MetricReport:
    mmd: float
    coverage: float
    jsd: float
    sample_counts: tuple[int, int]
    voxel_resolution: int
    points_per_cloud: int = 2000

    def __post_init__(self):
        if not 0.0 <= self.coverage <= 1.0:
            raise MetricError("coverage outside [0, 1]")
        if not 0.0 <= self.jsd <= np.log(2.0) + 1e-12:
            raise MetricError("jsd outside [0, ln 2]")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["sample_counts"] = list(self.sample_counts)
        return d

    def to_text(self) -> str:
        return "\n".join(f"{k}={v}" for k, v in self.as_dict().items()) + "\n"


def metric_report(generated: list, test: list, resolution: int = 28, points: int = 2000) -> MetricReport:
    """MMD / COV on raw clouds, JSD after joint normalization into the unit cube."""
    D = chamfer_matrix(generated, test)
    g_n, t_n = normalize_cloud_sets(generated, test)
    return MetricReport(
        mmd=mmd(generated, test, D),
        coverage=coverage(generated, test, D),
        jsd=jsd(g_n, t_n, resolution),
        sample_counts=(len(generated), len(test)),
        voxel_resolution=resolution,
        points_per_cloud=points,
    )
