"""Cheap graphings at desk scale: IID star radii with a cost budget, an
in-cell spanning tree standing in for the cost-one part, and connectivity of
the graph obtained by contracting cells.

Point sets are rooted configurations in a window (Lie ball or tree ball).
Neighbour queries go through a point index that prunes candidate pairs with
an inexpensive bound and then confirms each pair with the exact metric.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import networkx as nx
import numpy as np

from . import lie_geometry as lg
from . import symmetric_sampler as ss
from . import tree_geometry as tg
from .errors import InvalidArgument, UncertifiedCells
from .pp_core import as_stream


# ---------------------------------------------------------------- radius law

@dataclass
class StarRadiusLaw:
    """Distribution of integer star radii ``0..n_max`` and its realized cost."""

    q: np.ndarray
    volumes: np.ndarray
    epsilon: float

    @property
    def n_max(self) -> int:
        return len(self.q) - 1

    def draw(self, uniforms: np.ndarray) -> np.ndarray:
        """Inverse-CDF radii; shared uniforms couple laws with different budgets."""
        cdf = np.cumsum(self.q)
        cdf[-1] = 1.0
        return np.searchsorted(cdf, np.asarray(uniforms), side="right").astype(np.int64)


def make_radius_law(epsilon: float, volume_table: Sequence[float]) -> StarRadiusLaw:
    """Law with ``q_n`` proportional to ``2**-n / vol(B(n))`` for ``1 <= n <= n_max``,
    scaled so that ``sum q_n vol(B(n)) = epsilon``, remainder at ``n = 0``.

    ``volume_table[n]`` is the expected number of other points within distance
    ``n`` of a point; entry 0 is ignored.
    """
    v = np.asarray(volume_table, dtype=float)
    if v.ndim != 1 or len(v) < 2:
        raise InvalidArgument("volume table needs entries for n = 0..n_max with n_max >= 1")
    if np.any(v[1:] <= 0) or np.any(np.diff(v[1:]) < 0):
        raise InvalidArgument("volume table must be positive and nondecreasing")
    if not epsilon > 0:
        raise InvalidArgument("epsilon must be positive")
    n = np.arange(1, len(v))
    scale = epsilon / (1.0 - 2.0 ** -n[-1])
    q = np.zeros(len(v))
    q[1:] = scale * 2.0 ** -n / v[1:]
    q0 = 1.0 - q[1:].sum()
    if q0 < 0:
        raise InvalidArgument(f"epsilon={epsilon} exceeds what radii up to {n[-1]} can carry "
                              f"with this volume table")
    q[0] = q0
    return StarRadiusLaw(q=q, volumes=v, epsilon=float(np.dot(q[1:], v[1:])))


def lie_volume_table(n: int, intensity: float, n_max: int) -> np.ndarray:
    return np.array([0.0] + [intensity * ss.ball_volume(n, r) for r in range(1, n_max + 1)])


def tree_volume_table(params: tg.TreeParams, intensity: float, n_max: int) -> np.ndarray:
    """Expected number of points at distance in ``(0, r]``: the root vertex is excluded."""
    return np.array([0.0] + [intensity * (tg.ball_size(params, r) - 1)
                             for r in range(1, n_max + 1)])


# ---------------------------------------------------------------- point indices

class LiePointIndex:
    """Exact neighbour queries on points ``g_i K``.

    With ``P = g g^T``, ``a = tr(P_x^{-1} P_y)`` is the sum of the squared
    singular values of ``g_x^{-1} g_y``, and ``d >= sqrt(n/2) log(a/n)``.
    The bound is a matrix product over all pairs; exact distances are
    computed only for pairs it cannot rule out.
    """

    def __init__(self, G: np.ndarray):
        self.G = np.asarray(G, dtype=float)
        self.n = self.G.shape[-1]
        P = self.G @ np.swapaxes(self.G, -1, -2)
        self._P = P.reshape(len(P), -1)
        self._Pinv = np.linalg.inv(P).reshape(len(P), -1)
        self.dist0 = lg.distance_from_origin(self.G) if len(self.G) else np.zeros(0)

    def __len__(self):
        return len(self.G)

    def lower(self, rows, cols) -> np.ndarray:
        """Lower bounds on ``d(rows[a], cols[b])``."""
        n = self.n
        tr = self._Pinv[rows] @ self._P[cols].T
        return math.sqrt(n / 2.0) * np.log(np.maximum(tr, n) / n)

    def exact_pairs(self, a, b) -> np.ndarray:
        a = np.asarray(a, dtype=np.int64)
        if len(a) == 0:
            return np.zeros(0)
        return lg.distance(self.G[a], self.G[np.asarray(b, dtype=np.int64)])


class TreePointIndex:
    """Exact neighbour queries on points of a product of trees.

    Distances between distinct words are tabulated per tree, so the bound
    used for pruning is the distance itself.
    """

    def __init__(self, params: tg.TreeParams, vertices: Sequence):
        self.params = params
        self.vertices = list(vertices)
        self._idx = []
        self._D2 = []
        for i in range(params.m):
            words = {}
            idx = np.array([words.setdefault(v[i], len(words)) for v in self.vertices],
                           dtype=np.int64)
            W = tg.pad_words(list(words))
            L = np.array([len(w) for w in words], dtype=np.int64)
            eq = (W[:, None, :] == W[None, :, :]) & (W[:, None, :] >= 0)
            common = np.cumprod(eq, axis=2).sum(axis=2)
            D = L[:, None] + L[None, :] - 2 * common
            self._idx.append(idx)
            self._D2.append(D * D)
        lens = np.array([[len(w) for w in v] for v in self.vertices], dtype=float)
        self.dist0 = np.sqrt((lens ** 2).sum(axis=1)) if self.vertices else np.zeros(0)

    def __len__(self):
        return len(self.vertices)

    def lower(self, rows, cols) -> np.ndarray:
        total = 0
        for t in range(self.params.m):
            idx = self._idx[t]
            total = total + self._D2[t][np.ix_(idx[rows], idx[cols])]
        return np.sqrt(np.asarray(total, dtype=float))

    def exact_pairs(self, a, b) -> np.ndarray:
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        total = 0
        for t in range(self.params.m):
            idx = self._idx[t]
            total = total + self._D2[t][idx[a], idx[b]]
        return np.sqrt(np.asarray(total, dtype=float))


def _row_chunks(m: int, cols: int, budget: int = 4_000_000):
    step = max(1, budget // max(cols, 1))
    for a in range(0, m, step):
        yield a, min(a + step, m)


def pairs_within(index, sources: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Directed pairs ``(i, j)`` with ``i`` in ``sources`` and ``0 < d(i, j) <= radii[i]``."""
    sources = np.asarray(sources, dtype=np.int64)
    N = len(index)
    allc = np.arange(N)
    out = []
    for a, b in _row_chunks(len(sources), N):
        src = sources[a:b]
        r = np.asarray(radii, dtype=float)[src]
        L = index.lower(src, allc)
        ii, jj = np.nonzero(L <= r[:, None] + 1e-9)
        ii, jj = src[ii], jj
        ok = ii != jj
        ii, jj = ii[ok], jj[ok]
        d = index.exact_pairs(ii, jj)
        keep = (d > 0) & (d <= np.asarray(radii, dtype=float)[ii])
        out.append(np.stack([ii[keep], jj[keep]], axis=1))
    return np.concatenate(out) if out else np.zeros((0, 2), dtype=np.int64)


def nearest_earlier(index, order: np.ndarray) -> np.ndarray:
    """For ``t >= 1`` the position ``j < t`` minimizing ``d(order[t], order[j])``.

    Ties go to the smallest ``j``.  Returns an array of length ``len(order) - 1``.
    """
    order = np.asarray(order, dtype=np.int64)
    m = len(order)
    parent = np.empty(max(m - 1, 0), dtype=np.int64)
    for a, b in _row_chunks(m - 1, m):
        t = np.arange(a + 1, b + 1)
        L = index.lower(order[t], order[:b])
        L[np.arange(b)[None, :] >= t[:, None]] = np.inf
        # one exact distance per row gives an upper bound on the minimum
        j0 = np.argmin(L, axis=1)
        ub = index.exact_pairs(order[t], order[j0])
        rr, jj = np.nonzero(L <= ub[:, None] + 1e-9)
        d = index.exact_pairs(order[t[rr]], order[jj])
        best = np.lexsort((jj, d, rr))
        rr, jj = rr[best], jj[best]
        first = np.r_[True, rr[1:] != rr[:-1]]
        parent[t[rr[first]] - 1] = jj[first]
    return parent


# ---------------------------------------------------------------- graph pieces

@dataclass
class FactorGraphSample:
    """Star and spanning edges on a rooted configuration.

    ``centers`` marks points far enough from the window boundary for their
    stars to be complete; costs are averaged over centers only.
    """

    n_points: int
    cell_of: np.ndarray
    radii: np.ndarray
    star_edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    spanning_edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    centers: np.ndarray | None = None


def build_stars(index, law: StarRadiusLaw, rng, cell_of=None, uniforms=None) -> FactorGraphSample:
    """Each point draws an IID radius and links to every point within it."""
    rng = as_stream(rng)
    N = len(index)
    u = rng.gen.random(N) if uniforms is None else np.asarray(uniforms)
    radii = law.draw(u)
    star = pairs_within(index, np.flatnonzero(radii > 0), radii).astype(np.int64)
    cells = np.zeros(N, dtype=np.int64) if cell_of is None else np.asarray(cell_of)
    return FactorGraphSample(n_points=N, cell_of=cells, radii=radii, star_edges=star)


def build_in_cell_spanning(index, cell_of: np.ndarray, labels: np.ndarray,
                           certified: np.ndarray | None = None,
                           allow_uncertified: bool = False) -> np.ndarray:
    """Label-ordered nearest-earlier-point tree inside every cell.

    Returns undirected edges ``(child, parent)``; a cell of ``k`` points gets
    ``k - 1`` edges.
    """
    cell_of = np.asarray(cell_of)
    if certified is not None and not allow_uncertified and not np.all(certified):
        raise UncertifiedCells(f"{int(np.sum(~np.asarray(certified)))} points lie in "
                               "uncertified cells")
    edges = []
    for c in np.unique(cell_of):
        members = np.flatnonzero(cell_of == c)
        members = members[np.argsort(labels[members], kind="stable")]
        if len(members) > 1:
            parent = nearest_earlier(index, members)
            edges.append(np.stack([members[1:], members[parent]], axis=1))
    return np.concatenate(edges).astype(np.int64) if edges else np.zeros((0, 2), dtype=np.int64)


@dataclass
class QuotientConnectivity:
    connected: bool
    components: int
    cells: np.ndarray
    bridged: np.ndarray


def quotient_connectivity(sample: FactorGraphSample) -> QuotientConnectivity:
    """Contract cells to vertices and keep the star edges between distinct cells."""
    if sample.n_points == 0:
        raise InvalidArgument("empty sample")
    cells = np.unique(sample.cell_of)
    pos = {int(c): k for k, c in enumerate(cells)}
    g = nx.Graph()
    g.add_nodes_from(range(len(cells)))
    bridged = np.zeros((len(cells), len(cells)), dtype=bool)
    for i, j in sample.star_edges:
        a, b = pos[int(sample.cell_of[i])], pos[int(sample.cell_of[j])]
        if a != b:
            g.add_edge(a, b)
            bridged[a, b] = bridged[b, a] = True
    comps = nx.number_connected_components(g)
    return QuotientConnectivity(connected=comps == 1, components=comps, cells=cells,
                                bridged=bridged)


@dataclass
class CostReport:
    star: float
    spanning: float
    total: float
    centers: int
    cells: int


def empirical_cost(sample: FactorGraphSample) -> CostReport:
    """Edges per center point: star out-degree plus the spanning edge to the parent."""
    if sample.n_points == 0:
        raise InvalidArgument("empty sample")
    centers = (np.ones(sample.n_points, dtype=bool) if sample.centers is None
               else np.asarray(sample.centers))
    m = int(centers.sum())
    if m == 0:
        return CostReport(math.nan, math.nan, math.nan, 0, len(np.unique(sample.cell_of)))
    out_deg = np.bincount(sample.star_edges[:, 0], minlength=sample.n_points)
    has_parent = np.zeros(sample.n_points, dtype=bool)
    has_parent[sample.spanning_edges[:, 0]] = True
    star = out_deg[centers].sum() / m
    span = has_parent[centers].sum() / m
    return CostReport(star=float(star), spanning=float(span), total=float(star + span),
                      centers=m, cells=len(np.unique(sample.cell_of)))
