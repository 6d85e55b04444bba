import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ipvt import experiments as ex
from ipvt import graphing as gr
from ipvt import lie_geometry as lg
from ipvt import symmetric_sampler as ss
from ipvt import tree_geometry as tg
from ipvt.errors import InvalidArgument, UncertifiedCells
from ipvt.pp_core import RngStream, palm_root

P22 = tg.TreeParams((2, 2))
VOL = np.array([0.0, 2.0, 7.0, 20.0])


def test_law_realizes_epsilon():
    for eps in (1e-6, 0.1, 0.5, 1.5):
        law = gr.make_radius_law(eps, VOL)
        assert abs(law.epsilon - eps) <= 1e-8
        assert math.isclose(law.q.sum(), 1.0) and np.all(law.q >= 0)
        assert abs(np.dot(law.q, law.volumes) - eps) <= 1e-8


def test_law_small_epsilon():
    assert gr.make_radius_law(1e-9, VOL).q[0] > 1 - 1e-9


def test_law_shape():
    q = gr.make_radius_law(0.3, VOL).q
    ratio = q[1:] * VOL[1:] * 2.0 ** np.arange(1, 4)
    assert np.allclose(ratio, ratio[0])


@pytest.mark.parametrize("eps,table", [(3.0, VOL), (0.0, VOL), (-1.0, VOL),
                                       (0.1, [0.0, 2.0, 1.0]), (0.1, [0.0]), (0.1, [0.0, 0.0, 1.0])])
def test_law_rejects(eps, table):
    with pytest.raises(InvalidArgument):
        gr.make_radius_law(eps, table)


def test_law_coupled_draws_monotone():
    u = np.random.default_rng(0).random(10000)
    small = gr.make_radius_law(0.1, VOL).draw(u)
    big = gr.make_radius_law(0.2, VOL).draw(u)
    assert np.all(big >= small) and big.max() <= 3


def test_law_draw_frequencies():
    law = gr.make_radius_law(0.5, VOL)
    r = law.draw(np.random.default_rng(1).random(200000))
    freq = np.bincount(r, minlength=4) / len(r)
    assert np.all(np.abs(freq - law.q) <= 4 * np.sqrt(law.q * (1 - law.q) / len(r)))


def test_volume_tables():
    assert np.allclose(gr.tree_volume_table(P22, 1.0, 2), [0, 6, 27])
    lie = gr.lie_volume_table(2, 2.0, 2)
    assert np.allclose(lie[1:], [2 * (math.cosh(r / math.sqrt(2)) - 1) for r in (1, 2)], rtol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([2, 3, 4]))
def test_lie_lower_bound(seed, n):
    G = lg.random_sl(n, RngStream(seed), size=30)
    idx = gr.LiePointIndex(G)
    L = idx.lower(np.arange(30), np.arange(30))
    D = lg.distance(G[:, None], G[None])
    assert np.all(L <= D + 1e-9)


def test_tree_index_exact():
    pts = tg.enumerate_ball(P22, 3)[::5]
    idx = gr.TreePointIndex(P22, pts)
    ref = np.array([[tg.tree_distance(a, b) for b in pts] for a in pts])
    r = np.arange(len(pts))
    assert np.allclose(idx.lower(r, r), ref)
    a, b = np.meshgrid(r, r, indexing="ij")
    assert np.allclose(idx.exact_pairs(a.ravel(), b.ravel()), ref.ravel())
    assert np.allclose(idx.dist0, [tg.tree_distance(P22.root, v) for v in pts])


def brute_pairs(D, radii):
    return {(i, j) for i in range(len(D)) for j in range(len(D))
            if i != j and 0 < D[i, j] <= radii[i]}


def test_pairs_within_lie():
    G = np.stack([p.matrix for p in ss.sample_ball_poisson(3, 30.0, 3.0, RngStream(2)).points])
    idx = gr.LiePointIndex(G)
    radii = np.random.default_rng(3).integers(0, 3, len(G))
    got = {tuple(e) for e in gr.pairs_within(idx, np.arange(len(G)), radii)}
    D = lg.distance(G[:, None], G[None])
    assert got == brute_pairs(D, radii)


def test_pairs_within_tree():
    pts = tg.sample_vertex_poisson(P22, 0.5, 3.0, RngStream(4)).points
    idx = gr.TreePointIndex(P22, pts)
    radii = np.random.default_rng(5).integers(0, 4, len(pts))
    got = {tuple(e) for e in gr.pairs_within(idx, np.flatnonzero(radii > 0), radii)}
    D = np.array([[tg.tree_distance(a, b) for b in pts] for a in pts])
    assert got == brute_pairs(D, radii)


def test_nearest_earlier_brute_force():
    G = np.stack([p.matrix for p in ss.sample_ball_poisson(2, 10.0, 3.0, RngStream(6)).points])
    idx = gr.LiePointIndex(G)
    order = np.random.default_rng(7).permutation(len(G))
    parent = gr.nearest_earlier(idx, order)
    D = lg.distance(G[:, None], G[None])
    for t in range(1, len(order)):
        d = D[order[t], order[:t]]
        assert parent[t - 1] == int(np.argmin(d))


def test_nearest_earlier_ties_smallest_position():
    pts = [P22.root, ((0,), ()), ((1,), ()), ((2,), ())]
    idx = gr.TreePointIndex(P22, pts)
    parent = gr.nearest_earlier(idx, np.array([1, 2, 3, 0]))
    assert list(parent) == [0, 0, 0]


def test_stars_examples():
    pts = [P22.root, ((0,), ())]
    idx = gr.TreePointIndex(P22, pts)
    zero = gr.StarRadiusLaw(q=np.array([1.0, 0, 0]), volumes=np.zeros(3), epsilon=0.0)
    assert len(gr.build_stars(idx, zero, RngStream(0)).star_edges) == 0
    two = gr.StarRadiusLaw(q=np.array([0, 0, 1.0]), volumes=np.zeros(3), epsilon=0.0)
    s = gr.build_stars(idx, two, RngStream(0))
    assert sorted(map(tuple, s.star_edges)) == [(0, 1), (1, 0)]


def test_star_edges_respect_radius():
    cfg = ss.sample_ball_poisson(2, 5.0, 4.0, RngStream(8))
    G = np.stack([p.matrix for p in cfg.points])
    idx = gr.LiePointIndex(G)
    law = gr.make_radius_law(0.5, gr.lie_volume_table(2, 5.0, 3))
    s = gr.build_stars(idx, law, RngStream(9))
    i, j = s.star_edges.T
    d = lg.distance(G[i], G[j])
    assert np.all((d > 0) & (d <= s.radii[i])) and np.all(i != j)


@pytest.mark.parametrize("space", ["sl2", "trees:2,2"])
def test_root_out_degree_matches_epsilon(space):
    # Mecke: E[root out-degree] = sum_n q_n vol(B(n)) = epsilon
    spec = ex.SpaceSpec(space)
    eps, reps = 0.1, 10000
    eta = 1.0
    vol = (gr.lie_volume_table(spec.n, eta, 3) if spec.is_lie
           else gr.tree_volume_table(spec.params, eta, 3))
    law = gr.make_radius_law(eps, vol)
    root_r = law.draw(RngStream(10).gen.random(reps))
    deg = np.zeros(reps)
    for i in np.flatnonzero(root_r > 0):
        cfg = palm_root(spec.ball_poisson(eta, float(root_r[i]), RngStream(11, (i,))), spec.origin(),
                        RngStream(12, (i,)))
        idx = (gr.LiePointIndex(ex.matrices(cfg.points)) if spec.is_lie
               else gr.TreePointIndex(spec.params, cfg.points))
        radii = np.zeros(len(cfg), dtype=np.int64)
        radii[cfg.root] = root_r[i]
        deg[i] = len(gr.pairs_within(idx, [cfg.root], radii))
    assert abs(deg.mean() - eps) <= 3 * deg.std() / math.sqrt(reps)


def test_spanning_tree_per_cell():
    pts = tg.enumerate_ball(P22, 2)
    idx = gr.TreePointIndex(P22, pts)
    gen = np.random.default_rng(13)
    cells = gen.integers(0, 4, len(pts))
    cells[0] = 9  # a singleton cell
    labels = gen.random(len(pts))
    e = gr.build_in_cell_spanning(idx, cells, labels)
    assert np.all(cells[e[:, 0]] == cells[e[:, 1]])
    for c in np.unique(cells):
        members = np.flatnonzero(cells == c)
        sub = e[np.isin(e[:, 0], members)]
        assert len(sub) == len(members) - 1
        g = nx.Graph()
        g.add_nodes_from(members)
        g.add_edges_from(map(tuple, sub))
        assert nx.is_connected(g)


def test_spanning_uncertified():
    idx = gr.TreePointIndex(P22, [P22.root, ((0,), ())])
    cert = np.array([True, False])
    with pytest.raises(UncertifiedCells):
        gr.build_in_cell_spanning(idx, np.zeros(2), np.array([0.1, 0.2]), cert)
    e = gr.build_in_cell_spanning(idx, np.zeros(2), np.array([0.1, 0.2]), cert,
                                  allow_uncertified=True)
    assert len(e) == 1


def test_quotient_examples():
    one = gr.FactorGraphSample(n_points=3, cell_of=np.zeros(3), radii=np.zeros(3))
    assert gr.quotient_connectivity(one).connected
    two = gr.FactorGraphSample(n_points=3, cell_of=np.array([0, 0, 1]), radii=np.zeros(3),
                               star_edges=np.array([[0, 1]]))
    q = gr.quotient_connectivity(two)
    assert not q.connected and q.components == 2
    bridged = gr.FactorGraphSample(n_points=3, cell_of=np.array([0, 0, 1]), radii=np.zeros(3),
                                   star_edges=np.array([[2, 1]]))
    q = gr.quotient_connectivity(bridged)
    assert q.connected and q.bridged[0, 1] and q.bridged[1, 0]
    with pytest.raises(InvalidArgument):
        gr.quotient_connectivity(gr.FactorGraphSample(0, np.zeros(0), np.zeros(0)))


def test_cost_examples():
    N = 10
    pts = tg.enumerate_ball(P22, 2)[:N]
    idx = gr.TreePointIndex(P22, pts)
    cells = np.zeros(N, dtype=np.int64)
    span = gr.build_in_cell_spanning(idx, cells, np.arange(N) / N)
    c = gr.empirical_cost(gr.FactorGraphSample(N, cells, np.zeros(N), spanning_edges=span))
    assert c.star == 0 and math.isclose(c.total, (N - 1) / N)
    none = gr.FactorGraphSample(N, cells, np.zeros(N), centers=np.zeros(N, dtype=bool))
    assert math.isnan(gr.empirical_cost(none).total)


def test_cost_identity():
    cfg = ss.sample_ball_poisson(3, 40.0, 3.0, RngStream(14))
    G = np.stack([p.matrix for p in cfg.points])
    idx = gr.LiePointIndex(G)
    cells = np.random.default_rng(15).integers(0, 7, len(G))
    law = gr.make_radius_law(0.2, gr.lie_volume_table(3, 40.0, 3))
    s = gr.build_stars(idx, law, RngStream(16), cells)
    s.spanning_edges = gr.build_in_cell_spanning(idx, cells, cfg.labels)
    c = gr.empirical_cost(s)
    N = len(G)
    assert math.isclose(c.total, len(s.star_edges) / N + 1 - len(np.unique(cells)) / N)


def test_connectivity_monotone_in_epsilon():
    cfg = ss.sample_ball_poisson(2, 10.0, 4.0, RngStream(17))
    G = np.stack([p.matrix for p in cfg.points])
    idx = gr.LiePointIndex(G)
    cells = np.random.default_rng(18).integers(0, 15, len(G))
    u = np.random.default_rng(19).random(len(G))
    vol = gr.lie_volume_table(2, 10.0, 3)
    comps, prev = [], set()
    for eps in (0.5, 1.0, 2.0):
        s = gr.build_stars(idx, gr.make_radius_law(eps, vol), None, cells, uniforms=u)
        edges = {tuple(e) for e in s.star_edges}
        assert prev <= edges
        prev = edges
        comps.append(gr.quotient_connectivity(s).components)
    assert comps == sorted(comps, reverse=True)


@pytest.mark.parametrize("space,radii,eta", [("sl2", [2.0, 3.0], 4.0), ("trees:2,2", [3.0, 4.0], 1.0)])
def test_graphing_replica_rows(space, radii, eta):
    rows = ex.graphing_replica(ex.SpaceSpec(space), radii, [0.1, 0.2], eta, RngStream(20))
    assert len(rows) == 4
    for eps in (0.1, 0.2):
        sel = [r for r in rows if r.epsilon == eps]
        assert [r.radius for r in sel] == radii
        assert sel[0].n_points <= sel[1].n_points
    for a, b in zip(rows[:2], rows[2:]):
        # coupled radii: the larger budget never loses connectivity
        assert a.components >= b.components
