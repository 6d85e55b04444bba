"""Walls between two ideal cells on spheres of growing radius, SL2 against SL3.

Run with ``python3 demos/rank_contrast.py``.
"""
import numpy as np

from ipvt import experiments as ex
from ipvt.pp_core import RngStream

seeds = range(8)
for n in (2, 3):
    hits = np.array([ex.wall_hits(n, RngStream(700, (s,)), probes_per_radius=100)["hits"]
                     for s in seeds])
    print(f"SL{n} wall hits at radii 2,4,6,8 (one row per seed)")
    print(hits)
