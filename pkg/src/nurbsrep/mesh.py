"""Wavefront OBJ export of sampled surfaces."""
from __future__ import annotations

from .nurbs import NurbsSurface, sample_uv_grid

__all__ = ["export_obj"]


def export_obj(surface: NurbsSurface, n: int, m: int, name: str = "surface") -> str:
    """Quad mesh over an ``n x m`` UV-grid, vertices in row-major order."""
    pts = sample_uv_grid(surface, n, m).points
    lines = [f"# {n}x{m} UV-grid", f"o {name}"]
    for x, y, z in pts.reshape(-1, 3):
        lines.append(f"v {x:.17g} {y:.17g} {z:.17g}")
    for i in range(n - 1):
        for j in range(m - 1):
            a = i * m + j + 1  # OBJ indices are 1-based
            lines.append(f"f {a} {a + m} {a + m + 1} {a + 1}")
    return "\n".join(lines) + "\n"
