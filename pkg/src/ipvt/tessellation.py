"""Generalized Voronoi tessellations with tie-breaking labels, truncation
certification, approximate r-walls and cell adjacency.

A cell is indexed by a distance-like function.  A probe belongs to the cell
of the function minimizing ``(value, label)`` lexicographically, so every
probe has exactly one winner even when values tie.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

from . import lie_geometry as lg
from . import symmetric_sampler as ss
from . import tree_geometry as tg
from .errors import InvalidArgument
from .pp_core import LabeledConfiguration, as_stream

SITE = "site"
CORONA_LIE = "corona_lie"
CORONA_TREE = "corona_tree"
_KINDS = (SITE, CORONA_LIE, CORONA_TREE)


@dataclass
class DistanceLikeFunction:
    """``kind`` is ``site`` (``x -> d(x, data) + shift``), ``corona_lie``
    (``data`` a :class:`~ipvt.symmetric_sampler.CoronaPoint`) or
    ``corona_tree`` (``data`` a :class:`~ipvt.tree_geometry.TreeCoronaFunction`)."""

    kind: str
    data: object
    label: float
    id: int
    shift: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidArgument(f"unknown function kind {self.kind!r}")


# ------------------------------------------------------------------- spaces

class LieSpace:
    """Probes are group elements ``g`` (the point ``gK``), shape ``(P, n, n)``."""

    def __init__(self, n: int):
        lg.root_system(n)
        self.n = n

    def probes(self, probes) -> np.ndarray:
        if isinstance(probes, np.ndarray):
            return probes if probes.ndim == 3 else probes[None]
        return np.stack([p.matrix if isinstance(p, ss.SymmetricPoint) else np.asarray(p)
                         for p in probes])

    def site_values(self, sites: Sequence, G: np.ndarray) -> np.ndarray:
        S = self.probes(list(sites))
        return lg.distance(S[:, None], G[None])

    def corona_values(self, points: Sequence, G: np.ndarray) -> np.ndarray:
        return ss.corona_value_matrix(list(points), G)

    def dist_to_origin(self, G: np.ndarray) -> np.ndarray:
        return lg.distance_from_origin(G)

    def distance(self, x, y) -> float:
        a = x.matrix if isinstance(x, ss.SymmetricPoint) else np.asarray(x)
        b = y.matrix if isinstance(y, ss.SymmetricPoint) else np.asarray(y)
        return float(lg.distance(a, b))


class TreeSpace:
    """Probes are product vertices (tuples of words)."""

    def __init__(self, params: tg.TreeParams):
        self.params = params

    def probes(self, probes) -> list:
        return list(probes)

    def site_values(self, sites: Sequence, probes: list) -> np.ndarray:
        out = np.empty((len(sites), len(probes)))
        for a, x in enumerate(sites):
            for b, v in enumerate(probes):
                out[a, b] = tg.tree_distance(x, v)
        return out

    def corona_values(self, points: Sequence, probes: list) -> np.ndarray:
        return tg.corona_values_tree(self.params, list(points), probes)

    def dist_to_origin(self, probes: list) -> np.ndarray:
        root = self.params.root
        return np.array([tg.tree_distance(root, v) for v in probes])

    def distance(self, x, y) -> float:
        return tg.tree_distance(x, y)


def value_matrix(functions: Sequence[DistanceLikeFunction], probes, space) -> np.ndarray:
    """Values of every function at every probe, shape ``(F, P)``."""
    P = space.probes(probes)
    out = np.empty((len(functions), len(P)))
    for kind in _KINDS:
        rows = [i for i, f in enumerate(functions) if f.kind == kind]
        if not rows:
            continue
        data = [functions[i].data for i in rows]
        if kind == SITE:
            vals = space.site_values(data, P)
            vals += np.array([functions[i].shift for i in rows])[:, None]
        else:
            vals = space.corona_values(data, P)
        out[rows] = vals
    return out


# ------------------------------------------------------------------ ranking

def lex_smallest(values: np.ndarray, labels: np.ndarray, ids: np.ndarray, k: int):
    """Per column, the ``k`` rows smallest in ``(value, label)`` order.

    Returns ``(vals, labs, ids)`` of shape ``(k, P)``, padded with ``inf`` and
    id ``-1`` when fewer than ``k`` rows exist.
    """
    values = np.asarray(values, dtype=float)
    labs = np.broadcast_to(np.asarray(labels, dtype=float)[:, None], values.shape)
    idm = np.broadcast_to(np.asarray(ids, dtype=np.int64)[:, None], values.shape)
    return _pad(*_lex_smallest_2d(values, labs, idm, k), k)


def _pad(v, l, i, k):
    if v.shape[0] < k:
        pad = k - v.shape[0]
        P = v.shape[1]
        v = np.vstack([v, np.full((pad, P), np.inf)])
        l = np.vstack([l, np.full((pad, P), np.inf)])
        i = np.vstack([i, np.full((pad, P), -1, dtype=np.int64)])
    return v, l, i


def streaming_lex_smallest(functions: Sequence[DistanceLikeFunction], probes, space, k: int,
                           chunk: int = 2048):
    """:func:`lex_smallest` over all functions without holding the full value matrix."""
    P = space.probes(probes)
    npr = len(P)
    labels = np.array([f.label for f in functions], dtype=float)
    ids = np.array([f.id for f in functions], dtype=np.int64)
    if (isinstance(space, TreeSpace) and k <= 2 and len(functions) > chunk and npr > 256
            and all(f.kind == CORONA_TREE for f in functions)):
        depth = max((len(w) for v in P for w in v), default=0)
        index = tg.TreeCoronaIndex(space.params, [f.data for f in functions], depth,
                                   ids=ids, labels=labels)
        v, l, i = index.top2(P)
        return v[:k], l[:k], i[:k]
    # f(p) >= f(o) - d(o, p) for every 1-Lipschitz f: visit functions by
    # increasing f(o) and skip probes whose k-th best is already below the bound
    at_origin = np.array([_value_at_origin(f) for f in functions], dtype=float)
    order = np.argsort(at_origin, kind="stable")
    prune = len(functions) > chunk and np.isfinite(at_origin).all()
    d0 = space.dist_to_origin(P) if prune else None
    fast = isinstance(space, LieSpace) and all(f.kind == CORONA_LIE for f in functions)
    if fast and len(functions):
        K = np.stack([functions[j].data.k for j in order])
        sv = np.array([functions[j].data.s for j in order], dtype=float)
    best_v = np.full((k, npr), np.inf)
    best_l = np.full((k, npr), np.inf)
    best_i = np.full((k, npr), -1, dtype=np.int64)
    for a in range(0, len(functions), chunk):
        b = min(a + chunk, len(functions))
        rows = order[a:b]
        if prune:
            cols = np.flatnonzero(at_origin[rows[0]] - d0 <= best_v[k - 1])
            if len(cols) == 0:
                break
        else:
            cols = np.arange(npr)
        sub = P[cols] if isinstance(P, np.ndarray) else [P[c] for c in cols]
        if fast:
            vals = ss.corona_value_matrix((K[a:b], sv[a:b]), sub)
        else:
            vals = value_matrix([functions[j] for j in rows], sub, space)
        # merge the running best rows (per-column labels/ids) with the chunk
        cand_v = np.vstack([best_v[:, cols], vals])
        cand_l = np.vstack([best_l[:, cols], np.broadcast_to(labels[rows, None], vals.shape)])
        cand_i = np.vstack([best_i[:, cols], np.broadcast_to(ids[rows, None], vals.shape)])
        v, l, i = _pad(*_lex_smallest_2d(cand_v, cand_l, cand_i, k), k)
        best_v[:, cols], best_l[:, cols], best_i[:, cols] = v, l, i
    return best_v, best_l, best_i


def _value_at_origin(f: DistanceLikeFunction) -> float:
    if f.kind == CORONA_LIE:
        return f.data.s
    if f.kind == CORONA_TREE:
        return f.data.offset
    return -math.inf


def _lex_smallest_2d(values, labels, ids, k):
    """As :func:`lex_smallest` with per-entry labels and ids."""
    F, P = values.shape
    kk = min(k, F)
    if F > kk:
        kth = np.partition(values, kk - 1, axis=0)[kk - 1]
        rows, cols = np.nonzero(values <= kth[None, :])
    else:
        rows, cols = np.nonzero(np.ones_like(values, dtype=bool))
    order = np.lexsort((labels[rows, cols], values[rows, cols], cols))
    rows, cols = rows[order], cols[order]
    start = np.searchsorted(cols, np.arange(P))
    rank = np.arange(len(cols)) - start[cols]
    keep = rank < kk
    r, c, q = rows[keep], cols[keep], rank[keep]
    out_v = np.full((kk, P), np.inf)
    out_l = np.full((kk, P), np.inf)
    out_i = np.full((kk, P), -1, dtype=np.int64)
    out_v[q, c] = values[r, c]
    out_l[q, c] = labels[r, c]
    out_i[q, c] = ids[r, c]
    return out_v, out_l, out_i


# --------------------------------------------------------------- assignment

@dataclass
class CellAssignment:
    probes: object
    winner: np.ndarray
    certified: np.ndarray
    margin: np.ndarray
    value: np.ndarray = field(default=None)
    label: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.winner)


def assign_cells(functions: Sequence[DistanceLikeFunction], probes, space,
                 s_max: float | None = None) -> CellAssignment:
    """Tie-breaking Voronoi assignment of every probe.

    With ``s_max`` given, a probe is certified when its best value is at most
    ``s_max - d(o, probe)``: every function missing from a sample truncated at
    ``s_max`` exceeds that bound by 1-Lipschitz continuity.  Without
    ``s_max``, probes are certified only when all functions are sites.
    """
    if len(functions) == 0:
        raise InvalidArgument("assign_cells needs at least one function")
    P = space.probes(probes)
    vals, labs, ids = streaming_lex_smallest(functions, P, space, 2)
    margin = vals[1] - vals[0]
    margin[ids[1] < 0] = np.inf
    if s_max is not None:
        certified = vals[0] <= s_max - space.dist_to_origin(P)
    else:
        certified = np.full(len(P), all(f.kind == SITE for f in functions))
    return CellAssignment(probes=P, winner=ids[0], certified=certified, margin=margin,
                          value=vals[0], label=labs[0])


def refine_assignment(assign: CellAssignment, new_functions: Sequence[DistanceLikeFunction],
                      space, s_max: float) -> CellAssignment:
    """Fold a truncation layer into an assignment made at a lower ``s_max``.

    ``new_functions`` must be exactly the functions with offsets between the
    old and the new truncation level.  Probes already certified keep their
    winner (no new function can beat it); the others are re-ranked against
    the new layer and recertified at ``s_max``.
    """
    P = assign.probes
    out = CellAssignment(probes=P, winner=assign.winner.copy(),
                         certified=assign.certified.copy(), margin=assign.margin.copy(),
                         value=assign.value.copy(), label=assign.label.copy())
    todo = np.flatnonzero(~assign.certified)
    if len(todo) == 0 or len(new_functions) == 0:
        return out
    sub = P[todo] if isinstance(P, np.ndarray) else [P[i] for i in todo]
    nv, nl, ni = streaming_lex_smallest(new_functions, sub, space, 2)
    ov, ol = assign.value[todo], assign.label[todo]
    take_new = (nv[0] < ov) | ((nv[0] == ov) & (nl[0] < ol))
    second = np.sort(np.stack([ov, ov + assign.margin[todo], nv[0], nv[1]]), axis=0)[1]
    out.winner[todo] = np.where(take_new, ni[0], assign.winner[todo])
    out.value[todo] = np.where(take_new, nv[0], ov)
    out.label[todo] = np.where(take_new, nl[0], ol)
    with np.errstate(invalid="ignore"):
        out.margin[todo] = np.where(np.isfinite(second), second - out.value[todo], np.inf)
    out.certified[todo] = out.value[todo] <= s_max - space.dist_to_origin(sub)
    return out


def site_functions(config: LabeledConfiguration) -> list:
    return [DistanceLikeFunction(SITE, loc, float(lab), i) for i, (loc, lab) in enumerate(config)]


def corona_functions(config: LabeledConfiguration, kind: str | None = None) -> list:
    if kind is None:
        kind = CORONA_TREE if config.window.get("kind") == "tree_corona" else CORONA_LIE
    return [DistanceLikeFunction(kind, pt, float(lab), i) for i, (pt, lab) in enumerate(config)]


def classical_pv(sites: LabeledConfiguration, probes, space) -> CellAssignment:
    """Voronoi assignment for the distance functions of a finite site set."""
    if len(sites) == 0:
        raise InvalidArgument("classical_pv needs at least one site")
    return assign_cells(site_functions(sites), probes, space)


# -------------------------------------------------------------------- walls

@dataclass
class WallProbeResult:
    pair: tuple
    probe: object
    top_gap: float
    third_excess: float


def wall_statistics(functions: Sequence[DistanceLikeFunction], pair: tuple, probes, space):
    """Per-probe ``(top_gap, third_excess)`` arrays for ``pair``.

    ``third_excess`` is the smallest value among the other functions minus
    ``min(f1, f2)``, or ``inf`` when there are no others.
    """
    a, b = pair
    P = space.probes(probes)
    by_id = {f.id: f for f in functions}
    if a not in by_id or b not in by_id:
        raise InvalidArgument(f"pair {pair} not among the function ids")
    pv = value_matrix([by_id[a], by_id[b]], P, space)
    others = [f for f in functions if f.id not in (a, b)]
    low = np.minimum(pv[0], pv[1])
    if others:
        vals, _, _ = streaming_lex_smallest(others, P, space, 1)
        third = vals[0] - low
    else:
        third = np.full(len(P), np.inf)
    return np.abs(pv[0] - pv[1]), third


def wall_probe(functions, pair, probes, space, delta: float, r: float) -> list:
    """Probes on the ``delta``-relaxed ``r``-wall of ``pair``.

    A probe qualifies when ``|f1 - f2| <= delta`` and every other function
    exceeds ``min(f1, f2)`` by more than ``r``.
    """
    if delta < 0 or r < 0:
        raise InvalidArgument("delta and r must be nonnegative")
    P = space.probes(probes)
    gap, third = wall_statistics(functions, pair, P, space)
    hits = np.flatnonzero((gap <= delta) & (third > r))
    return [WallProbeResult(tuple(pair), P[i], float(gap[i]), float(third[i])) for i in hits]


def wall_extent_stats(functions, pair, probe_spheres: Iterable, space, delta: float,
                      r: float) -> list:
    """Number of wall hits on each probe set of an increasing sequence."""
    return [len(wall_probe(functions, pair, sph, space, delta, r)) for sph in probe_spheres]


# ---------------------------------------------------------------- adjacency

def adjacency_graph(assignment: CellAssignment, edges: Iterable) -> nx.Graph:
    """Cells as vertices; two cells adjacent when a probe edge joins them."""
    g = nx.Graph()
    g.add_nodes_from(int(w) for w in np.unique(assignment.winner))
    w = assignment.winner
    for i, j in edges:
        if w[i] != w[j]:
            g.add_edge(int(w[i]), int(w[j]))
    return g


def tree_probe_edges(params: tg.TreeParams, vertices: Sequence) -> list:
    """Index pairs of vertices that are adjacent in the product graph."""
    index = {v: i for i, v in enumerate(vertices)}
    edges = []
    for i, v in enumerate(vertices):
        for u in tg.product_neighbours(params, v):
            j = index.get(u)
            if j is not None and i < j:
                edges.append((i, j))
    return edges


def knn_probe_edges(space, probes, k: int = 6) -> list:
    """Symmetrized ``k``-nearest-neighbour relation on a finite probe set."""
    P = space.probes(probes)
    m = len(P)
    if isinstance(space, LieSpace):
        D = lg.distance(P[:, None], P[None])
    else:
        D = np.array([[space.distance(a, b) for b in P] for a in P])
    np.fill_diagonal(D, np.inf)
    edges = set()
    for i in range(m):
        for j in np.argsort(D[i])[:k]:
            edges.add((min(i, int(j)), max(i, int(j))))
    return sorted(edges)


# ------------------------------------------------------------------ probes

def sphere_probes(n: int, radius: float, count: int, rng) -> np.ndarray:
    """``count`` points on the sphere of radius ``radius`` about the origin.

    Directions are Haar rotations times a Cartan vector drawn from the
    sphere's volume density (``J`` restricted to the sphere), so the probes
    are uniform for the Riemannian surface measure.
    """
    rng = as_stream(rng)
    gen = rng.split(0).gen
    c = lg.root_system(n).two_rho_norm
    got = []
    total = 0
    while total < count:
        Y = gen.standard_normal((4 * count + 16, n))
        Y -= Y.mean(axis=1, keepdims=True)
        Y /= lg.norm(Y)[:, None]
        H = -np.sort(-Y, axis=1) * radius
        with np.errstate(divide="ignore"):
            acc = gen.random(len(H)) < np.exp(lg.log_jacobian_J(H) - c * radius)
        got.append(H[acc])
        total += int(acc.sum())
    H = np.concatenate(got)[:count]
    K = lg.haar_orthogonal(n, rng.split(1), size=count)
    return K @ lg.exp_diag(H)


def tree_sphere(params: tg.TreeParams, radius: float, width: float = 0.5) -> list:
    """Vertices whose distance to the root lies in ``(radius - width, radius + width]``."""
    return [v for v in tg.enumerate_ball(params, radius + width)
            if tg.tree_distance(params.root, v) > radius - width]
