"""Cheap graphing on a rooted Poisson sample: star edges plus in-cell spanning trees.

Run with ``python3 demos/graphing_cost.py``.
"""
from ipvt import experiments as ex
from ipvt.pp_core import RngStream

spec = ex.SpaceSpec("trees:2,2")
for s in range(3):
    for row in ex.graphing_replica(spec, [4.0, 6.0], [0.1, 0.2], 1.0, RngStream(800, (s,))):
        print(f"seed {s} R={row.radius:g} eps={row.epsilon}: {row.n_points} points, "
              f"{row.n_cells} cells, star {row.star_cost:.3f}, total {row.total_cost:.3f}, "
              f"quotient components {row.components}")
