#!/usr/bin/env python3
"""Input size and construction speed of stored NURBS vs UV-grids.

    python scripts/size_speed.py --count 1000
"""
from __future__ import annotations

import argparse

from nurbsrep.datagen import CorpusSpec, generate
from nurbsrep.formats import dumps
from nurbsrep.metrics import bench_construction
from nurbsrep.nurbs import sample_uv_grid
from nurbsrep.preprocess import normalize


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args(argv)

    per = a.count // 4
    corpus = generate(CorpusSpec(
        counts={"plane": per, "ruled": per, "smooth": per, "cylinder": a.count - 3 * per}, seed=a.seed))
    grids = [sample_uv_grid(s, a.grid, a.grid) for s in corpus]
    nurbs_bytes = len(dumps("nurbs", corpus))
    grid_bytes = len(dumps("uvgrid", grids))
    print(f"surfaces={len(corpus)}")
    print(f"nurbs_bytes={nurbs_bytes}")
    print(f"uvgrid_bytes={grid_bytes}")
    print(f"size_reduction={100 * (1 - nurbs_bytes / grid_bytes):.1f}%")

    stored = [normalize(s) for s in corpus]
    nr, gr = bench_construction(stored, grids, repetitions=a.reps)
    print(f"nurbs_rate={nr:.0f}/s")
    print(f"uvgrid_rate={gr:.0f}/s")
    print(f"speedup={nr / gr:.1f}x")


if __name__ == "__main__":
    main()
