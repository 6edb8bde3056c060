import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nurbsrep.datagen import make_cylinder_segment, make_plane
from nurbsrep.fitting import FitError, FitSpec, clamped_uniform_knots, default_fit, fit_surface
from nurbsrep.nurbs import NurbsSurface, UvGrid, sample_uv_grid, surface_eval_many


def cubic_6x6(seed=0):
    rng = np.random.default_rng(seed)
    k = np.array([0, 0, 0, 0, 0.3, 0.6, 1, 1, 1, 1.0])
    return NurbsSurface(3, 3, k, k, rng.normal(size=(6, 6, 3)), np.ones((6, 6)))


def test_clamped_uniform_knots():
    np.testing.assert_allclose(clamped_uniform_knots(6, 3), [0, 0, 0, 0, 1 / 3, 2 / 3, 1, 1, 1, 1])
    assert clamped_uniform_knots(4, 3, 2.0, 5.0).tolist() == [2, 2, 2, 2, 5, 5, 5, 5]


def test_plane_is_reproduced():
    rng = np.random.default_rng(0)
    plane = make_plane(rng)
    g = sample_uv_grid(plane, 32, 32)
    fit, rms = fit_surface(g, FitSpec(3, 3, 6, 6))
    assert rms < 1e-10
    assert fit.degrees == (3, 3)
    a, b, c = plane.control_points[0, 0], plane.control_points[1, 0], plane.control_points[0, 1]
    normal = np.cross(b - a, c - a)
    normal /= np.linalg.norm(normal)
    pts = surface_eval_many(fit, rng.uniform(0, 1, 300), rng.uniform(0, 1, 300))
    assert np.max(np.abs((pts - a) @ normal)) < 1e-10


def test_source_in_span_is_recovered_at_uniform_knots():
    # a source whose knots coincide with the fit's knots lies in the fit space
    k = clamped_uniform_knots(6, 3)
    src = NurbsSurface(3, 3, k, k, np.random.default_rng(1).normal(size=(6, 6, 3)), np.ones((6, 6)))
    fit, rms = fit_surface(sample_uv_grid(src, 32, 32), FitSpec(3, 3, 6, 6))
    assert rms < 1e-12
    np.testing.assert_allclose(fit.control_points, src.control_points, atol=1e-10)


def test_refit_nonuniform_source_is_close():
    src = cubic_6x6()
    fit, rms = fit_surface(sample_uv_grid(src, 32, 32), FitSpec(3, 3, 10, 10))
    assert rms < 0.05


def test_residual_monotone_in_control_count():
    g = sample_uv_grid(make_cylinder_segment(2.0, 1.0, 1.0), 24, 24)
    res = [fit_surface(g, FitSpec(3, 1, c, 2))[1] for c in (4, 5, 6, 8, 10)]
    assert res[0] > res[2]
    assert all(b <= a + 1e-15 for a, b in zip(res, res[1:]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), alpha=st.floats(-3, 3), beta=st.floats(-3, 3))
def test_fit_is_linear_in_samples(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    dom = (0.0, 1.0, 0.0, 1.0)
    a = UvGrid(rng.normal(size=(9, 7, 3)), dom)
    b = UvGrid(rng.normal(size=(9, 7, 3)), dom)
    spec = FitSpec(2, 3, 5, 4)
    fa = fit_surface(a, spec)[0].control_points
    fb = fit_surface(b, spec)[0].control_points
    fab = fit_surface(UvGrid(alpha * a.points + beta * b.points, dom), spec)[0].control_points
    np.testing.assert_allclose(fab, alpha * fa + beta * fb, atol=1e-9)


def test_default_fit_is_cubic():
    plane = make_plane(np.random.default_rng(4))
    assert plane.degrees == (1, 1)
    fit = default_fit(sample_uv_grid(plane, 32, 32))
    assert fit.degrees == (3, 3) and fit.dims == (8, 8)
    cyl = make_cylinder_segment(1.0, 2.0, 1.0)
    assert default_fit(sample_uv_grid(cyl, 32, 32)).degrees == (3, 3)


def test_fit_errors():
    g = UvGrid(np.zeros((4, 4, 3)), (0, 1, 0, 1))
    with pytest.raises(FitError):
        fit_surface(g, FitSpec(3, 3, 5, 4))
    with pytest.raises(FitError):
        FitSpec(3, 3, 3, 4)
    with pytest.raises(FitError):
        FitSpec(1, 1, 2, 2, parameterization="chord")
    with pytest.raises(FitError):
        default_fit(UvGrid(np.zeros((3, 8, 3)), (0, 1, 0, 1)))


def test_fit_preserves_domain():
    g = UvGrid(np.random.default_rng(0).normal(size=(10, 10, 3)), (2.0, 4.0, -1.0, 0.0))
    fit, _ = fit_surface(g, FitSpec(2, 2, 4, 4))
    assert fit.domain == (2.0, 4.0, -1.0, 0.0)
    assert np.all(fit.weights == 1)
