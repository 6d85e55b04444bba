"""Experiment drivers shared by the command line and the acceptance suite.

Each driver takes plain parameters and an :class:`~ipvt.pp_core.RngStream`
and returns a list of row dictionaries (one per CSV row) or a small result
object.  Nothing here writes files.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import graphing as gr
from . import lie_geometry as lg
from . import pp_core as pp
from . import symmetric_sampler as ss
from . import tessellation as ts
from . import tree_geometry as tg
from .errors import InvalidArgument, UncertifiedCells


# -------------------------------------------------------------------- spaces

@dataclass(frozen=True)
class SpaceSpec:
    """``sl2``, ``sl3``, ``sl4`` or ``trees:q1,q2,...``."""

    name: str

    def __post_init__(self):
        if self.is_lie:
            lg.root_system(self.n)
        elif self.is_tree:
            tg.TreeParams(self.degrees)
        else:
            raise InvalidArgument(f"unknown space {self.name!r}")

    @property
    def is_lie(self) -> bool:
        return self.name in ("sl2", "sl3", "sl4")

    @property
    def is_tree(self) -> bool:
        return self.name.startswith("trees:")

    @property
    def n(self) -> int:
        return int(self.name[2:])

    @property
    def degrees(self) -> tuple:
        try:
            return tuple(int(q) for q in self.name.split(":", 1)[1].split(","))
        except ValueError:
            raise InvalidArgument(f"bad tree degrees in {self.name!r}") from None

    @property
    def params(self) -> tg.TreeParams:
        return tg.TreeParams(self.degrees)

    @property
    def two_rho_norm(self) -> float:
        return lg.root_system(self.n).two_rho_norm if self.is_lie else self.params.two_rho_norm

    def space(self):
        return ts.LieSpace(self.n) if self.is_lie else ts.TreeSpace(self.params)

    def origin(self):
        return ss.ORIGIN[self.n] if self.is_lie else self.params.root

    def ball_poisson(self, intensity, radius, rng):
        if self.is_lie:
            return ss.sample_ball_poisson(self.n, intensity, radius, rng)
        return tg.sample_vertex_poisson(self.params, intensity, radius, rng)

    def corona(self, s_max, rng):
        if self.is_lie:
            return ss.sample_corona(self.n, None, s_max, rng)
        return tg.sample_tree_corona(self.params, s_max, rng)

    def extend_corona(self, config, delta, rng):
        if self.is_lie:
            return ss.extend_corona(config, delta, rng)
        return tg.extend_tree_corona(self.params, config, delta, rng)

    def log_ball(self, radius: float) -> float:
        if self.is_lie:
            return ss.log_ball_volume(self.n, radius)
        return math.log(tg.ball_size(self.params, radius))


def matrices(points) -> np.ndarray:
    return np.stack([p.matrix for p in points])


# ------------------------------------------------------------ volume growth

def volume_growth(spec: SpaceSpec, t_max: float, step: float = 1.0) -> list:
    """Log ball volumes and successive log ratios on ``t = step, 2 step, ..., t_max``.

    ``corrected_ratio`` removes the polynomial factor ``t**((rank - 1) / 2)``
    expected in higher rank (rank 1 for trees and ``SL_2``).
    """
    if not t_max > step > 0:
        raise InvalidArgument("need 0 < step < t_max")
    rank = spec.n - 1 if spec.is_lie else 1
    ts_ = np.arange(step, t_max + step / 2, step)
    logv = np.array([spec.log_ball(float(t)) for t in ts_])
    rows = []
    for a, t in enumerate(ts_):
        ratio = math.nan if a == 0 else (logv[a] - logv[a - 1]) / step
        corr = (math.nan if a == 0 else
                ratio - 0.5 * (rank - 1) * math.log(t / ts_[a - 1]) / step)
        rows.append({"t": float(t), "log_volume": float(logv[a]), "log_ratio": ratio,
                     "corrected_ratio": corr, "two_rho_norm": spec.two_rho_norm})
    return rows


# ------------------------------------------------------- Busemann convergence

def busemann_gaps(n: int, ts_: Sequence[float], rng, n_probes: int = 20, n_dirs: int = 20,
                  probe_radius: float = 3.0) -> np.ndarray:
    """``|busemann_convergence_gap|`` for fixed probes and directions, shape ``(len(ts), P, D)``.

    Probes are uniform in radius on ``[0, probe_radius]`` with Haar directions
    in the Cartan chamber.
    """
    rng = pp.as_stream(rng)
    gen = rng.split(0).gen
    Y = gen.standard_normal((n_probes, n))
    Y -= Y.mean(axis=1, keepdims=True)
    Y /= lg.norm(Y)[:, None]
    H = -np.sort(-Y, axis=1) * (probe_radius * gen.random(n_probes))[:, None]
    G = lg.haar_orthogonal(n, rng.split(1), size=n_probes) @ lg.exp_diag(H)
    K = lg.haar_orthogonal(n, rng.split(2), size=n_dirs)
    out = np.empty((len(ts_), n_probes, n_dirs))
    for a, t in enumerate(ts_):
        out[a] = np.abs(lg.busemann_convergence_gap(K[None, :], G[:, None], float(t)))
    return out


@dataclass
class EnvelopeFit:
    C: float
    c: float
    ts: np.ndarray
    gaps: np.ndarray

    def envelope(self, t):
        t = np.asarray(t, dtype=float)
        return self.C * np.maximum(np.exp(-self.c * t), t ** -0.5)

    @property
    def dominated(self) -> bool:
        return bool(np.all(self.gaps <= self.envelope(self.ts) * (1 + 1e-9)))


def fit_envelope(ts_: Sequence[float], max_gaps: Sequence[float]) -> EnvelopeFit:
    """Fit ``C max(exp(-c t), t**-1/2)`` to the first two points of a gap sequence.

    ``c`` comes from the log slope between the first two times (floored at
    zero) and ``C`` makes the envelope touch the first point.  The remaining
    times are out of sample.
    """
    t = np.asarray(ts_, dtype=float)
    g = np.maximum(np.asarray(max_gaps, dtype=float), 1e-300)
    c = max(0.0, -(math.log(g[1]) - math.log(g[0])) / (t[1] - t[0]))
    C = g[0] / max(math.exp(-c * t[0]), t[0] ** -0.5)
    return EnvelopeFit(C=C, c=c, ts=t, gaps=np.asarray(max_gaps, dtype=float))


def busemann_converge(n: int, ts_: Sequence[float], rng, n_probes: int = 20,
                      n_dirs: int = 20) -> list:
    gaps = busemann_gaps(n, ts_, rng, n_probes, n_dirs)
    return [{"t": float(t), "max_gap": float(gaps[a].max()), "mean_gap": float(gaps[a].mean())}
            for a, t in enumerate(ts_)]


# ------------------------------------------------------------- corona mass

def corona_mass_counts(spec: SpaceSpec, a_values: Sequence[float], reps: int, rng) -> np.ndarray:
    """Number of sampled corona functions with value at most ``a`` at the origin.

    The value of a corona function at the origin is its offset, so each
    replica samples with ``s_max = max(a_values)`` and counts offsets.
    Returns an integer array of shape ``(reps, len(a_values))``.
    """
    rng = pp.as_stream(rng)
    a = np.asarray(a_values, dtype=float)
    out = np.empty((reps, len(a)), dtype=np.int64)
    origin = [spec.origin()]
    space = spec.space()
    for i in range(reps):
        cfg = spec.corona(float(a.max()), rng.split(i))
        if len(cfg):
            vals = space.corona_values(cfg.points, space.probes(
                matrices(origin) if spec.is_lie else origin))[:, 0]
        else:
            vals = np.zeros(0)
        out[i] = (vals[:, None] <= a[None, :]).sum(axis=0)
    return out


# ------------------------------------------------------------- tessellations

def _lie_probe_cloud(n: int, radius: float, count: int, rng) -> np.ndarray:
    """Volume-distributed probe points in the ball of radius ``radius``."""
    pts = [ss.sample_ball_location(n, radius, rng.split(i)) for i in range(count)]
    return matrices(pts)


def tessellation_rows(spec: SpaceSpec, kind: str, rng, radius: float, s_max: float,
                      intensity: float = 1.0, probes: int = 200) -> list:
    """Cell assignment of probes for a classical (``pv``) or ideal (``ipvt``) tessellation.

    Lie probes are volume-distributed in the ball of radius ``radius``; tree
    probes are all vertices of that ball.
    """
    rng = pp.as_stream(rng)
    space = spec.space()
    if kind == "pv":
        cfg = spec.ball_poisson(intensity, radius + s_max, rng.split(0))
        if len(cfg) == 0:
            raise InvalidArgument("the site sample is empty; raise intensity or radius")
        fns = ts.site_functions(cfg)
        # sites reach distance radius + s_max: nearer ones than s_max certify
        cap = None
    elif kind == "ipvt":
        cfg = spec.corona(s_max, rng.split(0))
        if len(cfg) == 0:
            raise InvalidArgument("the corona sample is empty; raise s_max")
        fns = ts.corona_functions(cfg)
        cap = s_max
    else:
        raise InvalidArgument(f"unknown tessellation kind {kind!r}")
    if spec.is_lie:
        P = _lie_probe_cloud(spec.n, radius, probes, rng.split(1))
    else:
        P = tg.enumerate_ball(spec.params, radius)
    assign = ts.assign_cells(fns, P, space, cap)
    if kind == "pv":
        assign.certified = assign.value <= s_max
    d0 = space.dist_to_origin(P)
    return [{"probe_id": i, "cell_id": int(assign.winner[i]), "value": float(assign.value[i]),
             "margin": float(assign.margin[i]), "dist_origin": float(d0[i]),
             "certified": int(assign.certified[i])} for i in range(len(assign))]


# ------------------------------------------------------------------ walls

def wall_hits(n: int, rng, radii: Sequence[float] = (2, 4, 6, 8), delta: float = 0.05,
              r: float = 0.5, probes_per_radius: float = 200.0, margin: float = 2.0) -> dict:
    """Wall hits of one sampled pair of IPVT cells on spheres of growing radius.

    The pair is the two functions with the smallest offsets (the cells
    nearest the origin).  On the sphere of radius ``R`` the corona sample is
    truncated at ``R + margin``; a hit needs ``|f1 - f2| <= delta``, every
    other sampled function above ``min(f1, f2) + r``, and
    ``min(f1, f2) + r <= margin`` so that unsampled functions cannot
    interfere.  Probe counts are ``probes_per_radius * R``.
    """
    rng = pp.as_stream(rng)
    s_max = max(radii) + margin
    cfg = ss.sample_corona(n, None, s_max, rng.split(0))
    fns = ts.corona_functions(cfg)
    offsets = np.array([p.s for p in cfg.points])
    if len(fns) < 2:
        return {"pair": (-1, -1), "hits": [0] * len(radii)}
    pair = tuple(int(i) for i in np.argsort(offsets, kind="stable")[:2])
    space = ts.LieSpace(n)
    hits = []
    for j, R in enumerate(radii):
        sub = [f for f in fns if f.data.s <= R + margin]
        G = ts.sphere_probes(n, R, int(round(probes_per_radius * R)), rng.split(1).split(j))
        vals, _, ids = ts.streaming_lex_smallest(sub, G, space, 3)
        pv = ts.value_matrix([fns[pair[0]], fns[pair[1]]], G, space)
        low = pv.min(axis=0)
        other = np.where(np.isin(ids, pair), np.inf, vals).min(axis=0)
        hit = (np.abs(pv[0] - pv[1]) <= delta) & (other - low > r) & (low + r <= margin)
        hits.append(int(hit.sum()))
    return {"pair": pair, "hits": hits}


def non_decreasing(seq) -> bool:
    return all(b >= a for a, b in zip(seq, seq[1:]))


# --------------------------------------------------------------- adjacency

def adjacency_rows(spec: SpaceSpec, rng, radius: float, s_max: float, probes: int = 400,
                   k: int = 6) -> list:
    """Edges of the IPVT cell adjacency graph seen on a probe set."""
    rng = pp.as_stream(rng)
    space = spec.space()
    cfg = spec.corona(s_max, rng.split(0))
    fns = ts.corona_functions(cfg)
    if spec.is_lie:
        P = _lie_probe_cloud(spec.n, radius, probes, rng.split(1))
        edges = ts.knn_probe_edges(space, P, k)
    else:
        P = tg.enumerate_ball(spec.params, radius)
        edges = ts.tree_probe_edges(spec.params, P)
    assign = ts.assign_cells(fns, P, space, s_max)
    ok = assign.certified
    edges = [(i, j) for i, j in edges if ok[i] and ok[j]]
    g = ts.adjacency_graph(assign, edges)
    return [{"cell_a": int(a), "cell_b": int(b)} for a, b in sorted(
        (min(u, v), max(u, v)) for u, v in g.edges())]


# ---------------------------------------------------------------- graphing

@dataclass
class GraphingWindowResult:
    radius: float
    epsilon: float
    n_points: int
    n_cells: int
    centers: int
    star_cost: float
    total_cost: float
    connected: bool
    components: int


def _certified_cells(spec, locs, rng, s_max, allow_uncertified):
    """IPVT cells of the window points, extending the corona once if needed."""
    space = spec.space()
    cfg = spec.corona(s_max, rng.split(0))
    P = matrices(locs) if spec.is_lie else locs
    if len(cfg) == 0:
        cfg = spec.extend_corona(cfg, 2.0, rng.split(1).split(0))
    assign = ts.assign_cells(ts.corona_functions(cfg), P, space, cfg.window["s_max"])
    if not assign.certified.all():
        old = len(cfg)
        cfg = spec.extend_corona(cfg, 2.0, rng.split(1).split(1))
        assign = ts.refine_assignment(assign, ts.corona_functions(cfg)[old:], space,
                                      cfg.window["s_max"])
    if assign.certified.all() or allow_uncertified:
        return assign
    raise UncertifiedCells(f"{int((~assign.certified).sum())} window points are not certified "
                           f"at s_max={cfg.window['s_max']}")


def graphing_replica(spec: SpaceSpec, radii: Sequence[float], epsilons: Sequence[float],
                     intensity: float, rng, n_max: int = 3, buffer: float | None = None,
                     allow_uncertified: bool = False) -> list:
    """Cheap graphing on nested windows of one rooted sample.

    The Palm sample lives in the largest window; smaller windows use its
    restriction.  Radius draws share uniforms across budgets, so larger
    budgets give edge supersets.  Costs count centers at distance at most
    ``radius - buffer`` from the origin (``buffer`` defaults to ``n_max``).
    """
    rng = pp.as_stream(rng)
    radii = sorted(float(x) for x in radii)
    buffer = float(n_max) if buffer is None else float(buffer)
    T = radii[-1]
    cfg = pp.palm_root(spec.ball_poisson(intensity, T, rng.split(0)), spec.origin(),
                       rng.split(1))
    assign = _certified_cells(spec, cfg.points, rng.split(2), T + 2.0, allow_uncertified)
    if spec.is_lie:
        index = gr.LiePointIndex(matrices(cfg.points))
        vol = gr.lie_volume_table(spec.n, intensity, n_max)
    else:
        index = gr.TreePointIndex(spec.params, cfg.points)
        vol = gr.tree_volume_table(spec.params, intensity, n_max)
    d0 = index.dist0
    u = rng.split(3).gen.random(len(cfg))
    cells = assign.winner
    span = gr.build_in_cell_spanning(index, cells, cfg.labels, assign.certified,
                                     allow_uncertified=True)
    rows = []
    for eps in epsilons:
        law = gr.make_radius_law(eps, vol)
        full = gr.build_stars(index, law, None, cells, uniforms=u)
        for R in radii:
            inside = d0 <= R + 1e-12
            keep = np.flatnonzero(inside)
            remap = -np.ones(len(cfg), dtype=np.int64)
            remap[keep] = np.arange(len(keep))
            se = full.star_edges
            se = se[inside[se[:, 0]] & inside[se[:, 1]]] if len(se) else se
            sp = span[inside[span[:, 0]] & inside[span[:, 1]]] if len(span) else span
            sample = gr.FactorGraphSample(
                n_points=len(keep), cell_of=cells[keep], radii=full.radii[keep],
                star_edges=remap[se].reshape(-1, 2), spanning_edges=remap[sp].reshape(-1, 2),
                centers=d0[keep] <= R - buffer + 1e-12)
            cost = gr.empirical_cost(sample)
            conn = gr.quotient_connectivity(sample)
            rows.append(GraphingWindowResult(
                radius=R, epsilon=float(eps), n_points=len(keep), n_cells=conn.cells.size,
                centers=cost.centers, star_cost=cost.star, total_cost=cost.total,
                connected=conn.connected, components=conn.components))
    return rows


# ------------------------------------------------------------------- Mecke

def mecke_windows(spec: SpaceSpec, intensity: float = 1.0, radius: float = 2.0,
                  s_max: float = 1.0) -> dict:
    """The Poisson windows checked by the Mecke oracle for one space."""
    if spec.is_lie:
        return {"ball": ss.BallWindow(spec.n, intensity, radius),
                "corona": ss.CoronaWindow(spec.n, s_max)}
    return {"vertex_ball": tg.VertexWindow(spec.params, intensity, radius),
            "tree_corona": tg.TreeCoronaWindow(spec.params, s_max)}


def mecke_rows(spec: SpaceSpec, reps: int, rng, **window_kw) -> list:
    rng = pp.as_stream(rng)
    rows = []
    for a, (wname, win) in enumerate(sorted(mecke_windows(spec, **window_kw).items())):
        for b, (fname, f) in enumerate(sorted(pp.MECKE_TEST_FUNCTIONS.items())):
            res = pp.mecke_check(win, f, reps, rng.split(a).split(b))
            rows.append({"sampler": wname, "function": fname, "lhs": res.lhs, "rhs": res.rhs,
                         "z": res.z, "passed": int(res.passed)})
    return rows


# ------------------------------------------------------------- disk export

def to_disk(G: np.ndarray) -> np.ndarray:
    """Unit-disk coordinate of ``g K`` for ``g`` in ``SL_2``: Cayley transform of ``g . i``."""
    G = np.asarray(G, dtype=float)
    if G.shape[-2:] != (2, 2):
        raise InvalidArgument("disk export needs 2 x 2 matrices")
    a, b, c, d = G[..., 0, 0], G[..., 0, 1], G[..., 1, 0], G[..., 1, 1]
    z = (a * 1j + b) / (c * 1j + d)
    return (z - 1j) / (z + 1j)
