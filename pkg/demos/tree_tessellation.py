"""Tie-breaking ideal Voronoi cells on a product of two 3-regular trees.

Run with ``python3 demos/tree_tessellation.py``.
"""
import numpy as np

from ipvt import tessellation as ts
from ipvt import tree_geometry as tg
from ipvt.pp_core import RngStream

params = tg.TreeParams((2, 2))
space = ts.TreeSpace(params)
s_max = 2.5

cfg = tg.sample_tree_corona(params, s_max, RngStream(3))
fns = ts.corona_functions(cfg)
ball = tg.enumerate_ball(params, 6)
assign = ts.assign_cells(fns, ball, space, s_max)
sizes = np.bincount(assign.winner, minlength=len(fns))
print(f"{len(fns)} corona functions, {len(ball)} vertices in the radius-6 ball")
print("cell sizes:", sizes.tolist())
print(f"certified vertices: {int(assign.certified.sum())}")

# more functions only refine uncertified vertices; certified ones keep their cell
ext = tg.extend_tree_corona(params, cfg, 2.0, RngStream(4))
new = ts.refine_assignment(assign, ts.corona_functions(ext)[len(cfg):], space, s_max + 2.0)
kept = np.array_equal(new.winner[assign.certified], assign.winner[assign.certified])
print(f"after extending to s_max={s_max + 2}: certified {int(new.certified.sum())}, "
      f"earlier certified cells kept: {kept}")

g = ts.adjacency_graph(assign, ts.tree_probe_edges(params, ball))
print(f"cell adjacency graph: {g.number_of_nodes()} cells, {g.number_of_edges()} edges")
