import numpy as np

from nurbsrep.datagen import make_cylinder_segment
from nurbsrep.mesh import export_obj
from nurbsrep.nurbs import NurbsSurface, sample_uv_grid


def read_obj(text):
    verts, faces = [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(x.split("/")[0]) for x in parts[1:]])
    return np.array(verts), faces


def test_plane_quad():
    cps = np.array([[[0, 0, 0], [0, 1, 0]], [[1, 0, 0], [1, 1, 0]]], dtype=float)
    s = NurbsSurface(1, 1, [0, 0, 1, 1], [0, 0, 1, 1], cps, np.ones((2, 2)))
    v, f = read_obj(export_obj(s, 2, 2))
    assert v.shape == (4, 3) and f == [[1, 3, 4, 2]]


def test_grid_topology_and_precision():
    s = make_cylinder_segment(1.3, 0.7, 2.0)
    text = export_obj(s, 7, 5, name="cyl")
    assert "o cyl" in text
    v, f = read_obj(text)
    assert len(v) == 35 and len(f) == 24
    assert all(1 <= i <= 35 for face in f for i in face)
    np.testing.assert_allclose(v, sample_uv_grid(s, 7, 5).points.reshape(-1, 3), rtol=0, atol=1e-9)
    assert np.array_equal(v, sample_uv_grid(s, 7, 5).points.reshape(-1, 3))
