"""Least-squares B-spline surface fitting from UV-grids.

This is the baseline route: a sampled grid is turned back into a
(non-rational) B-spline by solving the separable tensor-product
least-squares problem ``min ||Nu C Nv^T - Q||`` one direction at a time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nurbs import NurbsError, NurbsSurface, UvGrid, basis_matrix

__all__ = ["FitSpec", "FitError", "clamped_uniform_knots", "fit_surface", "default_fit", "default_spec"]


class FitError(NurbsError):
    pass


@dataclass(frozen=True)
class FitSpec:
    degree_u: int
    degree_v: int
    num_ctrl_u: int
    num_ctrl_v: int
    parameterization: str = "uniform"

    def __post_init__(self):
        if self.degree_u < 1 or self.degree_v < 1:
            raise FitError("fit degrees must be >= 1")
        if self.num_ctrl_u < self.degree_u + 1 or self.num_ctrl_v < self.degree_v + 1:
            raise FitError("need at least degree+1 control points per direction")
        if self.parameterization != "uniform":
            raise FitError("only uniform parameterization is supported")


def clamped_uniform_knots(num_ctrl: int, degree: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    interior = np.linspace(lo, hi, num_ctrl - degree + 1)[1:-1]
    return np.concatenate([np.full(degree + 1, lo), interior, np.full(degree + 1, hi)])


def _solver(params, knots, degree):
    N = basis_matrix(knots, degree, params)
    A = N.T @ N
    if np.linalg.matrix_rank(A) < A.shape[0]:
        raise FitError(
            f"rank-deficient collocation matrix ({N.shape[0]} samples, {N.shape[1]} controls)"
        )
    return np.linalg.solve(A, N.T)


def fit_surface(grid: UvGrid, spec: FitSpec) -> tuple[NurbsSurface, float]:
    """Fit a unit-weight B-spline to ``grid``; returns ``(surface, rms)``.

    ``rms`` is the root-mean-square Euclidean residual over grid points.
    """
    n, m = grid.dims
    if spec.num_ctrl_u > n or spec.num_ctrl_v > m:
        raise FitError(f"{spec.num_ctrl_u}x{spec.num_ctrl_v} controls exceed {n}x{m} samples")
    u0, u1, v0, v1 = grid.domain
    us, vs = grid.parameters()
    ku = clamped_uniform_knots(spec.num_ctrl_u, spec.degree_u, u0, u1)
    kv = clamped_uniform_knots(spec.num_ctrl_v, spec.degree_v, v0, v1)
    Su = _solver(us, ku, spec.degree_u)
    Sv = _solver(vs, kv, spec.degree_v)
    ctrl = np.einsum("ia,abc,jb->ijc", Su, grid.points, Sv)
    surface = NurbsSurface(
        spec.degree_u, spec.degree_v, ku, kv, ctrl,
        np.ones((spec.num_ctrl_u, spec.num_ctrl_v)), label="fit",
    )
    Nu = basis_matrix(ku, spec.degree_u, us)
    Nv = basis_matrix(kv, spec.degree_v, vs)
    fitted = np.einsum("ai,ijc,bj->abc", Nu, ctrl, Nv)
    rms = float(np.sqrt(np.mean(np.sum((fitted - grid.points) ** 2, axis=-1))))
    return surface, rms


def default_spec(grid: UvGrid, degree: int = 3) -> FitSpec:
    n, m = grid.dims
    return FitSpec(
        degree, degree,
        max(degree + 1, math.ceil(n / 4)),
        max(degree + 1, math.ceil(m / 4)),
    )


def default_fit(grid: UvGrid) -> NurbsSurface:
    """Cubic fit with ``max(4, ceil(n/4))`` controls per direction."""
    n, m = grid.dims
    if n < 4 or m < 4:
        raise FitError("default_fit needs at least a 4x4 grid")
    return fit_surface(grid, default_spec(grid))[0]
