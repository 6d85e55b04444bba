"""Products of regular trees with the Euclidean product metric.

Tree ``i`` is ``(q_i + 1)``-regular.  A vertex is a word: the first letter
picks one of the ``q_i + 1`` neighbours of the root, every later letter one of
the ``q_i`` children.  A product vertex is a tuple of ``m`` such words.  Ends
are infinite words over the same alphabet, extended lazily from a seeded
stream.
"""
from __future__ import annotations

import itertools
from functools import partial
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidArgument, ResourceLimit
from .pp_core import LabeledConfiguration, RngStream, as_stream, poisson_count

DEFAULT_CAP = 10 ** 6

Word = tuple
ProductVertex = tuple  # tuple of m words


@dataclass(frozen=True)
class TreeParams:
    degrees: tuple

    def __post_init__(self):
        degs = tuple(int(q) for q in self.degrees)
        if len(degs) < 1 or any(q < 2 for q in degs):
            raise InvalidArgument(f"need at least one tree and every q_i >= 2, got {self.degrees}")
        object.__setattr__(self, "degrees", degs)

    @property
    def m(self) -> int:
        return len(self.degrees)

    @property
    def two_rho_norm(self) -> float:
        """``sqrt(sum (log q_i)^2)``, the exponential volume growth rate."""
        return math.sqrt(sum(math.log(q) ** 2 for q in self.degrees))

    @property
    def rho_hat_weights(self) -> np.ndarray:
        return np.array([math.log(q) for q in self.degrees]) / self.two_rho_norm

    @property
    def root(self) -> ProductVertex:
        return tuple(() for _ in self.degrees)


def check_vertex(params: TreeParams, v: ProductVertex) -> None:
    if len(v) != params.m:
        raise InvalidArgument(f"vertex has {len(v)} coordinates, expected {params.m}")
    for q, w in zip(params.degrees, v):
        for pos, a in enumerate(w):
            bound = q + 1 if pos == 0 else q
            if not 0 <= a < bound:
                raise InvalidArgument(f"letter {a} out of range at position {pos} (q={q})")


def lcp(a: Sequence[int], b: Sequence[int]) -> int:
    k = 0
    for x, y in zip(a, b):
        if x != y:
            break
        k += 1
    return k


def word_distance(a: Word, b: Word) -> int:
    return len(a) + len(b) - 2 * lcp(a, b)


def tree_distance(v: ProductVertex, w: ProductVertex) -> float:
    if len(v) != len(w):
        raise InvalidArgument("vertices belong to products of different sizes")
    return math.sqrt(sum(word_distance(a, b) ** 2 for a, b in zip(v, w)))


def neighbours(q: int, w: Word) -> list:
    out = [w[:-1]] if w else []
    out.extend(w + (a,) for a in range(q + 1 if not w else q))
    return out


def product_neighbours(params: TreeParams, v: ProductVertex) -> list:
    out = []
    for i, q in enumerate(params.degrees):
        for w in neighbours(q, v[i]):
            out.append(v[:i] + (w,) + v[i + 1:])
    return out


# ------------------------------------------------------------------- ends

class TreeEnd:
    """Infinite word, extended on demand from ``stream`` in fixed-size chunks.

    ``stream`` may also be a zero-argument callable returning the stream, so
    that ends which are never extended cost nothing to set up.
    """

    CHUNK = 32

    def __init__(self, q: int, stream: RngStream | None, prefix: Sequence[int] = ()):
        self.q = int(q)
        self.stream = stream
        self._letters = prefix if type(prefix) is list else list(prefix)
        self._gen = None

    def _extend(self, depth: int) -> None:
        if self.stream is None:
            raise InvalidArgument("end has no extension stream and its prefix is too short")
        if self._gen is None:
            if callable(self.stream):
                self.stream = self.stream()
            self._gen = self.stream.gen
        while len(self._letters) < depth:
            chunk = self._gen.integers(0, self.q, size=self.CHUNK)
            if not self._letters:
                chunk[0] = self._gen.integers(0, self.q + 1)
            self._letters.extend(int(a) for a in chunk)

    def prefix(self, depth: int) -> Word:
        if len(self._letters) < depth:
            self._extend(depth)
        return tuple(self._letters[:depth])

    def __repr__(self):
        return f"TreeEnd(q={self.q}, known={tuple(self._letters[:8])}...)"


def sample_end(params: TreeParams, i: int, rng) -> TreeEnd:
    """End of tree ``i`` drawn from the uniform (visual) measure."""
    return TreeEnd(params.degrees[i], as_stream(rng))


def busemann_tree(xi: TreeEnd, v: Word) -> int:
    """Busemann function of the end ``xi`` at ``v``, normalized to 0 at the root."""
    return len(v) - 2 * lcp(v, xi.prefix(len(v)))


@dataclass
class TreeCoronaFunction:
    ends: list
    offset: float
    label: float = 0.0


def corona_eval(params: TreeParams, f: TreeCoronaFunction, v: ProductVertex) -> float:
    w = params.rho_hat_weights
    return float(sum(w[i] * busemann_tree(f.ends[i], v[i]) for i in range(params.m))) + f.offset


def pad_words(words: Sequence[Word]) -> np.ndarray:
    """Words as rows of an integer array padded with ``-1``."""
    depth = max((len(w) for w in words), default=0)
    out = np.full((len(words), max(depth, 1)), -1, dtype=np.int64)
    for j, w in enumerate(words):
        out[j, :len(w)] = w
    return out


def busemann_table(ends: Sequence[TreeEnd], words: Sequence[Word], chunk: int = 512) -> np.ndarray:
    """``busemann_tree(ends[a], words[b])`` for all pairs, shape ``(len(ends), len(words))``."""
    W = pad_words(words)
    lengths = np.array([len(w) for w in words], dtype=np.int64)
    depth = W.shape[1]
    out = np.empty((len(ends), len(words)))
    for a in range(0, len(ends), chunk):
        rays = np.array([e.prefix(depth) for e in ends[a:a + chunk]], dtype=np.int64)
        rays = rays.reshape(-1, depth)
        eq = rays[:, None, :] == W[None, :, :]
        common = np.cumprod(eq, axis=2).sum(axis=2)
        out[a:a + chunk] = lengths[None, :] - 2 * common
    return out


def corona_values_tree(params: TreeParams, functions: Sequence[TreeCoronaFunction],
                       vertices: Sequence[ProductVertex]) -> np.ndarray:
    """Matrix of ``corona_eval`` values, shape ``(len(functions), len(vertices))``.

    Per-tree Busemann values are computed once per distinct word.
    """
    w = params.rho_hat_weights
    out = np.zeros((len(functions), len(vertices)))
    if len(functions) == 0:
        return out
    for i in range(params.m):
        words = {}
        idx = np.empty(len(vertices), dtype=np.int64)
        for j, v in enumerate(vertices):
            idx[j] = words.setdefault(v[i], len(words))
        table = busemann_table([f.ends[i] for f in functions], list(words))
        out += w[i] * table[:, idx]
    out += np.array([f.offset for f in functions])[:, None]
    return out


# ------------------------------------------------------------------- balls

def sphere_size(q: int, d: int) -> int:
    return 1 if d == 0 else (q + 1) * q ** (d - 1)


def words_at_depth(q: int, d: int) -> list:
    if d == 0:
        return [()]
    return [(a,) + rest for a in range(q + 1) for rest in itertools.product(range(q), repeat=d - 1)]


def _depth_tuples(m: int, R: float):
    rmax = int(math.floor(R + 1e-12))
    r2 = R * R + 1e-9
    return [d for d in itertools.product(range(rmax + 1), repeat=m) if sum(x * x for x in d) <= r2]


def ball_size(params: TreeParams, R: float) -> int:
    """Number of vertices within distance ``R`` of the root."""
    if R < 0:
        return 0
    total = 0
    for d in _depth_tuples(params.m, R):
        total += math.prod(sphere_size(q, x) for q, x in zip(params.degrees, d))
    return total


def enumerate_ball(params: TreeParams, R: float, cap: int = DEFAULT_CAP) -> list:
    """All product vertices within distance ``R`` of the root, in a fixed order."""
    if R < 0:
        raise InvalidArgument("R must be nonnegative")
    size = ball_size(params, R)
    if size > cap:
        raise ResourceLimit(f"ball of radius {R} has {size} vertices, above the cap {cap}")
    cache = {}
    out = []
    for d in _depth_tuples(params.m, R):
        lists = []
        for q, x in zip(params.degrees, d):
            if (q, x) not in cache:
                cache[(q, x)] = words_at_depth(q, x)
            lists.append(cache[(q, x)])
        out.extend(itertools.product(*lists))
    return out


# ---------------------------------------------------------------- sampling

def _end_stream(rng, j, i):
    return rng.split(1).split(j).split(i)


def _tree_corona_points(params, offsets, rng, labels):
    """Functions with the given offsets; ends start from a bulk-drawn prefix
    and continue lazily from per-end streams."""
    count = len(offsets)
    prefixes = []
    for i, q in enumerate(params.degrees):
        gen = rng.split(0).split(i).gen
        block = gen.integers(0, q, size=(count, TreeEnd.CHUNK))
        block[:, 0] = gen.integers(0, q + 1, size=count)
        prefixes.append(block.tolist())
    pts = []
    for j, s in enumerate(offsets):
        ends = [TreeEnd(q, partial(_end_stream, rng, j, i), prefixes[i][j])
                for i, q in enumerate(params.degrees)]
        pts.append(TreeCoronaFunction(ends, float(s), float(labels[j])))
    return pts


def sample_tree_corona(params: TreeParams, s_max: float, rng) -> LabeledConfiguration:
    """Poisson process of corona functions with offsets ``<= s_max``.

    Mean measure: uniform ends times ``2|rho| exp(2|rho| t) dt``, so the
    expected number of functions with value at most ``a`` at the root is
    ``exp(2|rho| a)``.
    """
    if not math.isfinite(s_max):
        raise InvalidArgument("s_max must be finite")
    rng = as_stream(rng)
    c = params.two_rho_norm
    count = poisson_count(math.exp(c * s_max), rng.split(0))
    offsets = s_max - rng.split(1).gen.exponential(1.0 / c, count)
    labels = rng.split(2).labels(count)
    pts = _tree_corona_points(params, offsets, rng.split(3), labels)
    return LabeledConfiguration(pts, labels, window={"kind": "tree_corona",
                                                     "degrees": params.degrees, "s_max": s_max})


def extend_tree_corona(params: TreeParams, config: LabeledConfiguration, delta: float,
                       rng) -> LabeledConfiguration:
    """Add an independent Poisson layer of offsets in ``(s_max, s_max + delta]``."""
    if delta < 0:
        raise InvalidArgument("delta must be nonnegative")
    rng = as_stream(rng)
    c = params.two_rho_norm
    s_max = config.window["s_max"]
    mass = math.exp(c * (s_max + delta)) - math.exp(c * s_max)
    count = poisson_count(mass, rng.split(0))
    v = rng.split(1).gen.random(count)
    offsets = s_max + delta + np.log1p(-v * -np.expm1(-c * delta)) / c
    labels = rng.split(2).labels(count)
    pts = _tree_corona_points(params, offsets, rng.split(3), labels)
    win = dict(config.window)
    win["s_max"] = s_max + delta
    return LabeledConfiguration(list(config.points) + pts,
                                np.concatenate([config.labels, labels]), window=win)


def sample_vertex_poisson(params: TreeParams, intensity: float, R: float, rng,
                          cap: int = DEFAULT_CAP) -> LabeledConfiguration:
    """Independent Poisson(``intensity``) multiplicities on every vertex of the ball."""
    if not intensity > 0:
        raise InvalidArgument("intensity must be positive")
    rng = as_stream(rng)
    ball = enumerate_ball(params, R, cap)
    mult = rng.split(0).gen.poisson(intensity, size=len(ball))
    pts = [ball[i] for i in np.repeat(np.arange(len(ball)), mult)]
    labels = rng.split(1).labels(len(pts))
    return LabeledConfiguration(pts, labels, window={"kind": "vertex_ball",
                                                     "degrees": params.degrees, "R": R,
                                                     "intensity": intensity})


def certify_tree(values: np.ndarray, s_max: float, dist_to_root: np.ndarray) -> np.ndarray:
    """Per-probe certification: the best sampled value is at most ``s_max - d(o, probe)``."""
    if values.shape[0] == 0:
        return np.zeros(values.shape[1], dtype=bool)
    return values.min(axis=0) <= s_max - dist_to_root


@dataclass
class TreeCoronaWindow:
    params: TreeParams
    s_max: float
    mass: float = field(init=False)

    def __post_init__(self):
        self.mass = math.exp(self.params.two_rho_norm * self.s_max)

    def sample(self, rng):
        return sample_tree_corona(self.params, self.s_max, rng)

    def sample_location(self, rng):
        rng = as_stream(rng)
        s = self.s_max - rng.split(0).gen.exponential(1.0 / self.params.two_rho_norm)
        ends = [sample_end(self.params, i, rng.split(1).split(i)) for i in range(self.params.m)]
        return TreeCoronaFunction(ends, float(s))


@dataclass
class VertexWindow:
    params: TreeParams
    intensity: float
    R: float
    mass: float = field(init=False)

    def __post_init__(self):
        self._ball = enumerate_ball(self.params, self.R)
        self.mass = self.intensity * len(self._ball)

    def sample(self, rng):
        return sample_vertex_poisson(self.params, self.intensity, self.R, rng)

    def sample_location(self, rng):
        return self._ball[int(as_stream(rng).gen.integers(len(self._ball)))]


# ------------------------------------------------------- indexed minimization

def _prefix_codes(W: np.ndarray, base: int) -> np.ndarray:
    """Integer code of every prefix of every padded word, shape ``(N, D + 1)``.

    Letters are shifted to ``1..q+1`` and read as base ``q + 2`` digits, so
    two prefixes share a code exactly when they are equal.
    """
    digits = np.where(W >= 0, W + 1, 0).astype(np.int64)
    pw = base ** np.arange(W.shape[1], dtype=np.int64)
    zero = np.zeros((W.shape[0], 1), dtype=np.int64)
    return np.concatenate([zero, np.cumsum(digits * pw, axis=1)], axis=1)


class TreeCoronaIndex:
    """Exact lexicographic top-2 of tree corona functions at many vertices.

    At ``v`` a function's value depends only on how far each of its rays
    follows the geodesic from the root to ``v_i``.  Functions are grouped by
    the tuple of ray prefixes; each group keeps its two smallest
    ``(offset, label)``.  The true top-2 at ``v`` always lies among the
    group leaders for the ancestors of ``v``, and those candidates are then
    evaluated exactly.
    """

    def __init__(self, params: TreeParams, functions: Sequence[TreeCoronaFunction],
                 depth: int, ids: Sequence[int] | None = None,
                 labels: Sequence[float] | None = None):
        self.params = params
        self.depth = int(depth)
        self.F = len(functions)
        self.offsets = np.array([f.offset for f in functions], dtype=float)
        self.labels = np.array([f.label for f in functions] if labels is None else labels,
                               dtype=float)
        self.ids = np.arange(self.F) if ids is None else np.asarray(ids, dtype=np.int64)
        D = max(self.depth, 1)
        self._bases = [q + 2 for q in params.degrees]
        self._mult = []
        m = 1
        for b in reversed(self._bases):
            self._mult.insert(0, m)
            m *= b ** D
            if m >= 2 ** 62:
                raise ResourceLimit("window too deep for the integer prefix encoding")
        self._ray_codes = []
        for i, b in enumerate(self._bases):
            rays = np.array([f.ends[i].prefix(D) for f in functions], dtype=np.int64).reshape(-1, D)
            self._ray_codes.append(_prefix_codes(rays, b))
        keys, rows = [], []
        for js in itertools.product(range(self.depth + 1), repeat=params.m):
            key = np.zeros(self.F, dtype=np.int64)
            for i, j in enumerate(js):
                key += self._ray_codes[i][:, j] * self._mult[i]
            keys.append(key)
            rows.append(np.arange(self.F))
        keys = np.concatenate(keys)
        rows = np.concatenate(rows)
        order = np.lexsort((self.labels[rows], self.offsets[rows], keys))
        keys, rows = keys[order], rows[order]
        self._keys, first = np.unique(keys, return_index=True)
        self._first = rows[first]
        nxt = first + 1
        has2 = nxt < len(keys)
        has2[has2] = keys[nxt[has2]] == self._keys[has2]
        self._second = np.where(has2, rows[np.minimum(nxt, len(rows) - 1)], -1)

    def top2(self, vertices: Sequence[ProductVertex]):
        """Values, labels and ids of the two best functions at each vertex.

        Returns arrays of shape ``(2, V)``, padded with ``inf`` and id ``-1``.
        """
        V = len(vertices)
        out_v = np.full((2, V), np.inf)
        out_l = np.full((2, V), np.inf)
        out_i = np.full((2, V), -1, dtype=np.int64)
        if V == 0 or self.F == 0:
            return out_v, out_l, out_i
        D = max(self.depth, 1)
        lens, vcodes = [], []
        for i, b in enumerate(self._bases):
            words = [v[i] for v in vertices]
            L = np.array([len(w) for w in words], dtype=np.int64)
            if L.max() > self.depth:
                raise InvalidArgument("vertex deeper than the index depth")
            W = np.full((V, D), -1, dtype=np.int64)
            for r, w in enumerate(words):
                W[r, :len(w)] = w
            lens.append(L)
            vcodes.append(_prefix_codes(W, b))
        cands = []
        for js in itertools.product(range(self.depth + 1), repeat=self.params.m):
            ok = np.ones(V, dtype=bool)
            key = np.zeros(V, dtype=np.int64)
            for i, j in enumerate(js):
                ok &= j <= lens[i]
                key += vcodes[i][:, j] * self._mult[i]
            pos = np.searchsorted(self._keys, key)
            pos = np.minimum(pos, len(self._keys) - 1)
            ok &= self._keys[pos] == key
            cands.append(np.where(ok, self._first[pos], -1))
            cands.append(np.where(ok, self._second[pos], -1))
        C = np.stack(cands, axis=1)
        valid = C >= 0
        Cs = np.where(valid, C, 0)
        w = self.params.rho_hat_weights
        vals = self.offsets[Cs]
        for i in range(self.params.m):
            eq = self._ray_codes[i][Cs, 1:] == vcodes[i][:, None, 1:]
            common = np.minimum(eq.sum(axis=2), lens[i][:, None])
            vals = vals + w[i] * (lens[i][:, None] - 2 * common)
        vals = np.where(valid, vals, np.inf)
        labs = np.where(valid, self.labels[Cs], np.inf)
        # sort each row by (value, label)
        idx = np.argsort(labs, axis=1, kind="stable")
        idx = np.take_along_axis(idx, np.argsort(np.take_along_axis(vals, idx, 1), axis=1,
                                                 kind="stable"), 1)
        vals = np.take_along_axis(vals, idx, 1)
        labs = np.take_along_axis(labs, idx, 1)
        C = np.take_along_axis(np.where(valid, C, -1), idx, 1)
        rows = np.arange(V)
        out_v[0], out_l[0], out_i[0] = vals[:, 0], labs[:, 0], np.where(C[:, 0] >= 0,
                                                                         self.ids[C[:, 0]], -1)
        other = (C != C[:, :1]) & (C >= 0)
        j2 = np.argmax(other, axis=1)
        has = other[rows, j2]
        out_v[1] = np.where(has, vals[rows, j2], np.inf)
        out_l[1] = np.where(has, labs[rows, j2], np.inf)
        out_i[1] = np.where(has, self.ids[np.maximum(C[rows, j2], 0)], -1)
        return out_v, out_l, out_i
