import itertools
import math

import networkx as nx
import numpy as np
import pytest
from scipy import stats

from ipvt import tree_geometry as tg
from ipvt.errors import InvalidArgument, ResourceLimit
from ipvt.pp_core import MECKE_TEST_FUNCTIONS, RngStream, mecke_check

P22 = tg.TreeParams((2, 2))


def fixed_end(q, letters):
    return tg.TreeEnd(q, None, list(letters))


def tree_graph(q, depth, extra=()):
    """Single-tree ball of the given depth plus the words in ``extra`` and their ancestors."""
    g = nx.Graph()
    words = [w for d in range(depth + 1) for w in tg.words_at_depth(q, d)]
    for w in extra:
        words += [w[:i] for i in range(len(w) + 1)]
    for w in words:
        g.add_node(w)
        if w:
            g.add_edge(w, w[:-1])
    return g


def test_params():
    with pytest.raises(InvalidArgument):
        tg.TreeParams((1, 2))
    with pytest.raises(InvalidArgument):
        tg.TreeParams(())
    assert math.isclose(P22.two_rho_norm, math.sqrt(2) * math.log(2))
    assert abs(P22.two_rho_norm - 0.9803) < 1e-4
    p = tg.TreeParams((2, 3, 5))
    assert math.isclose(np.sum(p.rho_hat_weights ** 2), 1.0)
    assert p.root == ((), (), ())


def test_check_vertex():
    tg.check_vertex(P22, ((2, 1), (0,)))
    with pytest.raises(InvalidArgument):
        tg.check_vertex(P22, ((3,), ()))
    with pytest.raises(InvalidArgument):
        tg.check_vertex(P22, ((0, 2), ()))
    with pytest.raises(InvalidArgument):
        tg.check_vertex(P22, ((),))


def test_distance_examples():
    o = P22.root
    assert tg.tree_distance(o, o) == 0
    v = ((0, 1, 1), (1, 0, 0, 1))
    assert tg.tree_distance(o, v) == 5
    assert tg.word_distance((0, 1, 1), (0, 0)) == 3
    with pytest.raises(InvalidArgument):
        tg.tree_distance(o, ((),))


def test_word_distance_matches_bfs():
    q = 2
    g = tree_graph(q, 4)
    bfs = dict(nx.all_pairs_shortest_path_length(g))
    for a, b in itertools.combinations(list(g.nodes)[::3], 2):
        assert tg.word_distance(a, b) == bfs[a][b]


def test_neighbours_degree():
    assert len(tg.neighbours(3, ())) == 4
    assert len(tg.neighbours(3, (1, 2))) == 4
    assert len(tg.product_neighbours(P22, P22.root)) == 6


def test_busemann_examples():
    xi = fixed_end(2, [0, 1, 0, 1, 1, 0, 0])
    assert tg.busemann_tree(xi, ()) == 0
    for k in range(1, 6):
        assert tg.busemann_tree(xi, tuple(xi.prefix(k))) == -k
    # hang j = 2 edges off the ray at depth k = 3
    v = (0, 1, 0, 0, 1)
    assert tg.busemann_tree(xi, v) == 2 - 3


def test_busemann_bfs_limit():
    # lim d(v, ray(t)) - t by graph search; t = 50 is past every confluence
    q = 2
    xi = tg.TreeEnd(q, RngStream(1))
    ray = xi.prefix(50)
    g = tree_graph(q, 5, extra=[ray])
    dist = nx.single_source_shortest_path_length(g, ray)
    for v in (w for d in range(6) for w in tg.words_at_depth(q, d)):
        assert tg.busemann_tree(xi, v) == dist[v] - 50


def test_single_tree_horofunction_exhaustive():
    params = tg.TreeParams((2,))
    f = tg.TreeCoronaFunction([tg.TreeEnd(2, RngStream(2))], offset=0.7)
    t = 40
    ray = f.ends[0].prefix(t)
    g = tree_graph(2, 8, extra=[ray])
    dist = nx.single_source_shortest_path_length(g, ray)
    for v in tg.enumerate_ball(params, 8):
        assert math.isclose(tg.corona_eval(params, f, v), dist[v[0]] - t + 0.7)


def test_corona_eval_examples():
    ends = [fixed_end(2, [1, 0, 1, 1]), fixed_end(2, [0, 0, 0, 0])]
    f = tg.TreeCoronaFunction(ends, offset=-0.3)
    assert tg.corona_eval(P22, f, P22.root) == -0.3
    w = P22.rho_hat_weights
    step = tg.corona_eval(P22, f, ((1,), ()))
    assert math.isclose(step, -0.3 - w[0])
    g = tg.TreeCoronaFunction(ends, offset=1.7)
    v = ((1, 1), (0,))
    assert math.isclose(tg.corona_eval(P22, g, v) - tg.corona_eval(P22, f, v), 2.0)


@pytest.mark.parametrize("degrees", [(2,), (2, 2), (2, 3)])
def test_corona_eval_lipschitz_on_edges(degrees):
    params = tg.TreeParams(degrees)
    conf = tg.sample_tree_corona(params, 1.0, RngStream(3))
    ball = tg.enumerate_ball(params, 6 if len(degrees) == 1 else 4)
    index = {v: j for j, v in enumerate(ball)}
    vals = tg.corona_values_tree(params, conf.points, ball)
    for v in ball:
        for u in tg.product_neighbours(params, v):
            if u in index:
                diff = np.abs(vals[:, index[v]] - vals[:, index[u]])
                assert np.all(diff <= 1 + 1e-12)


def test_corona_values_tree_matches_eval():
    conf = tg.sample_tree_corona(P22, 1.5, RngStream(4))
    ball = tg.enumerate_ball(P22, 3)
    M = tg.corona_values_tree(P22, conf.points, ball)
    for a, f in enumerate(conf.points):
        for b in range(0, len(ball), 7):
            assert math.isclose(M[a, b], tg.corona_eval(P22, f, ball[b]), abs_tol=1e-12)


def test_busemann_table():
    ends = [tg.TreeEnd(3, RngStream(0, (i,))) for i in range(5)]
    words = [w for d in range(4) for w in tg.words_at_depth(3, d)]
    T = tg.busemann_table(ends, words, chunk=2)
    ref = np.array([[tg.busemann_tree(e, w) for w in words] for e in ends])
    assert np.array_equal(T, ref)


def test_ball_examples():
    assert tg.enumerate_ball(P22, 0) == [P22.root]
    assert tg.ball_size(tg.TreeParams((2,)), 2) == 10
    assert len(tg.enumerate_ball(tg.TreeParams((2,)), 2)) == 10


@pytest.mark.parametrize("degrees,R", [((2, 2), 2.0), ((2, 3), 3.5), ((3,), 4.0), ((2, 2, 2), 2.5)])
def test_ball_brute_force(degrees, R):
    params = tg.TreeParams(degrees)
    per_tree = [[w for d in range(int(R) + 1) for w in tg.words_at_depth(q, d)] for q in degrees]
    ref = {v for v in itertools.product(*per_tree)
           if math.sqrt(sum(len(w) ** 2 for w in v)) <= R}
    ball = tg.enumerate_ball(params, R)
    assert len(ball) == len(set(ball)) == tg.ball_size(params, R)
    assert set(ball) == ref


def test_ball_28():
    assert tg.ball_size(P22, 2) == 1 + 2 * 3 + 2 * 6 + 9 == 28


def test_ball_closed_under_extension():
    R = 3.0
    ball = set(tg.enumerate_ball(P22, R))
    for v in ball:
        for u in tg.product_neighbours(P22, v):
            if tg.tree_distance(P22.root, u) <= R:
                assert u in ball


def test_ball_cap():
    with pytest.raises(ResourceLimit):
        tg.enumerate_ball(P22, 10, cap=1000)
    with pytest.raises(InvalidArgument):
        tg.enumerate_ball(P22, -1)


def test_end_deterministic_and_lazy():
    a = tg.TreeEnd(2, RngStream(5))
    b = tg.TreeEnd(2, lambda: RngStream(5))
    assert a.prefix(100) == b.prefix(100)
    short = a.prefix(3)
    assert a.prefix(100)[:3] == short
    with pytest.raises(InvalidArgument):
        fixed_end(2, [0]).prefix(2)


def test_end_first_letter_uniform():
    q = 3
    first = [tg.sample_end(tg.TreeParams((q,)), 0, RngStream(6, (i,))).prefix(1)[0]
             for i in range(10000)]
    obs = np.bincount(first, minlength=q + 1)
    assert stats.chisquare(obs).pvalue > 1e-3


def test_end_depth_two_uniform():
    q = 2
    codes = []
    for i in range(6000):
        a, b = tg.sample_end(P22, 1, RngStream(7, (i,))).prefix(2)
        codes.append(a * q + b)
    obs = np.bincount(codes, minlength=(q + 1) * q)
    assert len(obs) == 6
    assert stats.chisquare(obs).pvalue > 1e-3


def test_ends_differ():
    # collision probability at depth 20 is 1/(3 * 2**19) per pair
    ends = [tg.sample_end(P22, 0, RngStream(8, (i,))).prefix(20) for i in range(200)]
    assert len(set(ends)) == 200
    assert 200 * 199 / 2 / (3 * 2 ** 19) < 0.02


def test_tree_corona_root_mass():
    reps = 4000
    counts = [sum(f.offset <= 0 for f in tg.sample_tree_corona(P22, 0.5, RngStream(9, (i,))).points)
              for i in range(reps)]
    assert abs(np.mean(counts) - 1.0) <= 3 * math.sqrt(1.0 / reps)


def test_tree_corona_tail():
    s_max = 4.0
    off = np.concatenate([[f.offset for f in tg.sample_tree_corona(P22, s_max, RngStream(10, (i,))).points]
                          for i in range(40)])
    p = math.exp(-5 * P22.two_rho_norm)
    emp = np.mean(off <= s_max - 5)
    assert abs(emp - p) <= 3 * math.sqrt(p * (1 - p) / len(off))


def test_tree_corona_labels_and_errors():
    c = tg.sample_tree_corona(P22, 2.0, RngStream(11))
    assert np.array_equal(c.labels, [f.label for f in c.points])
    with pytest.raises(InvalidArgument):
        tg.sample_tree_corona(P22, math.nan, RngStream(0))


def test_extend_tree_corona():
    c = tg.sample_tree_corona(P22, 0.0, RngStream(12))
    e = tg.extend_tree_corona(P22, c, 2.0, RngStream(13))
    assert e.points[:len(c)] == c.points
    new = np.array([f.offset for f in e.points[len(c):]])
    assert np.all((new > 0) & (new <= 2.0))
    with pytest.raises(InvalidArgument):
        tg.extend_tree_corona(P22, c, -0.5, RngStream(13))


def test_extend_tree_corona_law():
    reps = 3000
    counts = [len(tg.extend_tree_corona(P22, tg.sample_tree_corona(P22, -1.0, RngStream(14, (0, i))),
                                        1.5, RngStream(14, (1, i)))) for i in range(reps)]
    mean = math.exp(0.5 * P22.two_rho_norm)
    assert abs(np.mean(counts) - mean) <= 3 * math.sqrt(mean / reps)


def test_vertex_poisson_total():
    R, eta, reps = 2.0, 0.7, 2000
    tot = [len(tg.sample_vertex_poisson(P22, eta, R, RngStream(15, (i,)))) for i in range(reps)]
    mean = eta * 28
    assert abs(np.mean(tot) - mean) <= 3 * math.sqrt(mean / reps)


def test_vertex_poisson_root_multiplicity():
    mult = [tg.sample_vertex_poisson(P22, 1.2, 1.0, RngStream(16, (i,))).points.count(P22.root)
            for i in range(5000)]
    k = np.arange(5)
    obs = np.array([np.sum(np.array(mult) == j) for j in k] + [np.sum(np.array(mult) >= 5)])
    p = np.append(stats.poisson.pmf(k, 1.2), stats.poisson.sf(4, 1.2))
    assert stats.chisquare(obs, p * len(mult)).pvalue > 1e-3


def test_vertex_poisson_disjoint_independent():
    a, b = [], []
    for i in range(3000):
        c = tg.sample_vertex_poisson(P22, 0.5, 2.0, RngStream(17, (i,)))
        a.append(sum(v[0][:1] == (0,) for v in c.points))
        b.append(sum(v[0][:1] == (1,) for v in c.points))
    assert stats.pearsonr(a, b)[1] > 1e-3


def test_vertex_poisson_rejects():
    with pytest.raises(InvalidArgument):
        tg.sample_vertex_poisson(P22, 0.0, 1.0, RngStream(0))
    with pytest.raises(ResourceLimit):
        tg.sample_vertex_poisson(P22, 1.0, 10.0, RngStream(0), cap=100)


def test_certify_tree():
    vals = np.array([[0.5, 2.0], [1.0, 3.0]])
    assert list(tg.certify_tree(vals, 2.0, np.array([1.0, 1.0]))) == [True, False]
    assert not tg.certify_tree(np.zeros((0, 3)), 2.0, np.zeros(3)).any()


@pytest.mark.parametrize("degrees,s_max,R", [((2, 2), 2.0, 4.0), ((2, 3), 1.5, 3.0), ((3,), 3.0, 6.0)])
def test_corona_index_matches_brute_force(degrees, s_max, R):
    params = tg.TreeParams(degrees)
    conf = tg.sample_tree_corona(params, s_max, RngStream(18))
    ball = tg.enumerate_ball(params, R)
    vals, labs, ids = tg.TreeCoronaIndex(params, conf.points, depth=int(R)).top2(ball)
    M = tg.corona_values_tree(params, conf.points, ball)
    L = np.array(conf.labels)
    for b in range(len(ball)):
        order = sorted(range(len(conf)), key=lambda a: (M[a, b], L[a]))
        assert list(ids[:, b]) == order[:2]
        assert np.allclose(vals[:, b], M[order[:2], b], atol=1e-12)


def test_corona_index_depth_guard():
    conf = tg.sample_tree_corona(P22, 1.0, RngStream(19))
    idx = tg.TreeCoronaIndex(P22, conf.points, depth=2)
    with pytest.raises(InvalidArgument):
        idx.top2([((0, 0, 0), ())])


@pytest.mark.parametrize("name", sorted(MECKE_TEST_FUNCTIONS))
def test_mecke_tree_corona(name):
    res = mecke_check(tg.TreeCoronaWindow(P22, 0.5), MECKE_TEST_FUNCTIONS[name], 2000, RngStream(20))
    assert res.passed


@pytest.mark.parametrize("name", sorted(MECKE_TEST_FUNCTIONS))
def test_mecke_vertex(name):
    res = mecke_check(tg.VertexWindow(P22, 0.1, 1.0), MECKE_TEST_FUNCTIONS[name], 2000, RngStream(21))
    assert res.passed
