import numpy as np
import pytest

from nurbsrep.datagen import (
    CorpusSpec,
    DatagenError,
    deduplicate,
    generate,
    make_cylinder_segment,
    random_rotation,
)
from nurbsrep.formats import dumps
from nurbsrep.metrics import degree_histogram
from nurbsrep.nurbs import sample_point_cloud, sample_uv_grid
from nurbsrep.preprocess import PreprocessConfig, denormalize, normalize, pack, unpack


def test_planes_are_bilinear_and_coplanar():
    planes = generate(CorpusSpec(counts={"plane": 20}, seed=2))
    for s in planes:
        assert s.degrees == (1, 1) and s.dims == (2, 2) and s.label == "plane"
        P = s.control_points.reshape(4, 3)
        n = np.cross(P[1] - P[0], P[2] - P[0])
        assert abs((P[3] - P[0]) @ n) < 1e-10 * np.linalg.norm(n) * np.linalg.norm(P[3] - P[0]) + 1e-12
    h = degree_histogram(planes)
    assert h["order"]["u"]["2"] == 100.0 and h["degree"]["v"]["1"] == 100.0


def test_cylinder_quarter_arc_distance_to_axis():
    R = random_rotation(np.random.default_rng(0))
    origin = np.array([1.0, -2.0, 3.0])
    s = make_cylinder_segment(np.pi / 2, 1.7, 2.5, R, origin)
    assert np.allclose(s.weights[1], np.cos(np.pi / 4))
    pts = sample_uv_grid(s, 40, 6).points.reshape(-1, 3)
    pts = np.concatenate([pts, sample_point_cloud(s, 500, 3).points])
    axis = R[:, 2]
    rel = pts - origin
    radial = rel - np.outer(rel @ axis, axis)
    assert np.max(np.abs(np.linalg.norm(radial, axis=1) - 1.7)) < 1e-10


def test_cylinder_angle_bounds():
    with pytest.raises(DatagenError):
        make_cylinder_segment(np.pi, 1.0, 1.0)


def test_deterministic():
    spec = CorpusSpec(seed=11)
    a, b = generate(spec), generate(spec)
    assert dumps("nurbs", a) == dumps("nurbs", b)
    assert dumps("nurbs", generate(CorpusSpec(seed=12))) != dumps("nurbs", a)


def test_every_surface_fits_and_round_trips():
    spec = CorpusSpec(counts={"plane": 5, "ruled": 30, "smooth": 30, "cylinder": 5},
                      pad_dim=6, knot_len=10, ctrl_range=(4, 6), seed=4)
    for s in generate(spec):
        n, m = s.dims
        assert n <= 6 and m <= 6 and s.knots_u.size <= 10 and s.knots_v.size <= 10
        ns, rec = normalize(s)
        back = denormalize(unpack(pack(ns, PreprocessConfig(6, 10), rec)), rec)
        assert back.degrees == s.degrees


def test_family_degrees():
    out = generate(CorpusSpec(counts={"ruled": 10, "smooth": 10}, seed=0))
    ruled = [s for s in out if s.label == "ruled"]
    smooth = [s for s in out if s.label == "smooth"]
    assert all(s.degree_v == 1 and s.degree_u in (2, 3) for s in ruled)
    assert all(min(s.degrees) >= 3 for s in smooth)


def test_spec_validation():
    with pytest.raises(DatagenError):
        CorpusSpec(counts={"torus": 1})
    with pytest.raises(DatagenError):
        CorpusSpec(counts={"plane": 0})
    with pytest.raises(DatagenError):
        generate(CorpusSpec(counts={"smooth": 1}, pad_dim=10, knot_len=7))


def test_deduplicate():
    planes = generate(CorpusSpec(counts={"plane": 3}, seed=1))
    assert len(deduplicate(planes + planes[:2])) == 3
