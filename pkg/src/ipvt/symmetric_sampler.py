"""Sampling on X = SL_n(R)/SO(n): Poisson points in balls, corona points
(horofunctions with exponential offset density), ball volumes by quadrature.

Volumes use Lebesgue measure ``dh_1 ... dh_{n-1}`` on the Cartan subalgebra
(coordinates of a trace-zero vector, last entry dropped) and the SO(n)
factor normalized to total mass one.  With this choice the SL_2 ball of
radius ``T`` has volume ``cosh(T / sqrt 2) - 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import lie_geometry as lg
from .errors import InvalidArgument, NumericFailure
from .pp_core import LabeledConfiguration, RngStream, as_stream, poisson_count


@dataclass
class SymmetricPoint:
    """The point ``k exp(H) o`` with ``H`` descending."""

    k: np.ndarray
    H: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return self.k @ lg.exp_diag(self.H)


@dataclass
class CoronaPoint:
    """Horofunction ``x -> busemann_eval(k, s, x)`` with a tie-breaking label."""

    k: np.ndarray
    s: float
    label: float = 0.0


ORIGIN = {n: SymmetricPoint(np.eye(n), np.zeros(n)) for n in lg.SUPPORTED_N}


def _check_n(n):
    if n not in lg.SUPPORTED_N:
        raise InvalidArgument(f"unsupported n={n}; expected one of {lg.SUPPORTED_N}")


# ------------------------------------------------------------------ geometry

def simple_root_basis(n: int) -> np.ndarray:
    """Matrix ``B`` with ``H = B @ x`` for simple-root coordinates ``x_i = h_i - h_{i+1}``."""
    B = np.zeros((n, n - 1))
    for i in range(n):
        for j in range(i, n - 1):
            B[i, j] = 1.0
    weights = np.arange(1, n)
    B[:, :] -= (weights / n)[None, :]
    return B


def lebesgue_scale(n: int) -> float:
    """Ratio of the orthonormal volume element (for ``<,>``) to ``dh_1...dh_{n-1}``."""
    return math.sqrt((2 * n) ** (n - 1) * n)


def orthonormal_basis(n: int) -> np.ndarray:
    """Rows: ``rho_hat`` followed by an orthonormal basis of its complement."""
    rs = lg.root_system(n)
    # trace-zero space basis e_i - e_{i+1}, Gram-Schmidt in <,>, starting from rho_hat
    vecs = [rs.rho_hat.copy()]
    for i in range(n - 1):
        v = np.zeros(n)
        v[i], v[i + 1] = 1.0, -1.0
        for u in vecs:
            v = v - lg.inner(v, u) * u
        nv = lg.norm(v)
        if nv > 1e-12:
            vecs.append(v / nv)
        if len(vecs) == n - 1:
            break
    return np.array(vecs)


def _unit_ball_volume(dim: int) -> float:
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)


# ---------------------------------------------------------------- quadrature

def _simpson_weights(m: int) -> np.ndarray:
    w = np.ones(m + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (3.0 * m)


def _log_radial_integral(n: int, lam: np.ndarray, T: float, nodes: int) -> np.ndarray:
    """``log int_0^{T/|H(lam)|} s^{n-2} J(s H(lam)) ds`` for simplex points ``lam``."""
    B = simple_root_basis(n)
    Hdir = lam @ B.T
    smax = T / lg.norm(Hdir)
    x, w = np.polynomial.legendre.leggauss(nodes)
    u = 0.5 * (x + 1.0)
    s = smax[:, None] * u[None, :]
    logf = (n - 2) * np.log(s) + lg.log_jacobian_J(s[..., None] * Hdir[:, None, :])
    top = logf.max(axis=1, keepdims=True)
    # rays along a chamber wall carry no volume
    top = np.where(np.isfinite(top), top, 0.0)
    integ = (np.exp(logf - top) * w[None, :]).sum(axis=1) * 0.5 * smax
    with np.errstate(divide="ignore"):
        return np.log(integ) + top[:, 0]


def _simplex_grid(n: int, m: int):
    """Interior-inclusive tensor Simpson grid on the standard simplex in ``R^{n-1}``.

    Returns points (rows summing to one) and weights w.r.t. ``dlam_1...dlam_{n-2}``.
    """
    if n == 2:
        return np.ones((1, 1)), np.ones(1)
    t = np.linspace(0.0, 1.0, m + 1)
    wt = _simpson_weights(m)
    if n == 3:
        return np.stack([t, 1 - t], axis=1), wt
    # n == 4: Duffy map of the unit square onto the triangle
    a, b = np.meshgrid(t, t, indexing="ij")
    wa, wb = np.meshgrid(wt, wt, indexing="ij")
    lam = np.stack([a, (1 - a) * b, (1 - a) * (1 - b)], axis=-1).reshape(-1, 3)
    return lam, (wa * wb * (1 - a)).reshape(-1)


def log_ball_volume(n: int, T: float, rtol: float = 1e-6, nodes: int = 64) -> float:
    """Logarithm of :func:`ball_volume`, safe for large ``T``.

    Simplex grids are doubled until the Richardson-extrapolated value moves
    by less than ``rtol`` (relative).
    """
    _check_n(n)
    if not T > 0:
        raise InvalidArgument("T must be positive")
    log_det = math.log(abs(np.linalg.det(simple_root_basis(n)[:-1, :])))
    if n == 2:
        lam, w = _simplex_grid(n, 0)
        return float(_log_radial_integral(n, lam, float(T), nodes)[0]) + log_det
    levels = []
    prev = None
    m = 8
    while m <= 1024:
        lam, w = _simplex_grid(n, m)
        lr = _log_radial_integral(n, lam, float(T), nodes)
        levels.append(lr.max() + math.log(float(np.sum(w * np.exp(lr - lr.max())))))
        if len(levels) >= 2:
            # Simpson error is O(h^4); extrapolate in the linear (not log) scale
            ref = levels[-1]
            est = ref + math.log((16.0 - math.exp(levels[-2] - ref)) / 15.0)
            if prev is not None and abs(est - prev) < rtol:
                return est + log_det
            prev = est
        m *= 2
    raise NumericFailure(f"ball volume quadrature did not converge for n={n}, T={T}")


def ball_volume(n: int, T: float, rtol: float = 1e-6) -> float:
    """Volume of the radius-``T`` ball: integral of ``J(H) dH`` over the chamber part of the ball."""
    return math.exp(log_ball_volume(n, T, rtol))


# ---------------------------------------------------------------- sampling

def _sample_truncated_exp(c: float, lo: float, hi: float, size: int, gen) -> np.ndarray:
    """Inversion for the density proportional to ``exp(c u)`` on ``(lo, hi]``."""
    v = gen.random(size)
    # u = hi + log(1 - v (1 - exp(-c (hi - lo)))) / c
    return hi + np.log1p(-v * -np.expm1(-c * (hi - lo))) / c


def _uniform_ball(dim: int, radius: float, size: int, gen) -> np.ndarray:
    if dim == 0:
        return np.zeros((size, 0))
    z = gen.standard_normal((size, dim))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * (radius * gen.random(size) ** (1.0 / dim))[:, None]


def envelope_mass(n: int, T: float) -> float:
    """Mass of ``exp(2 rho(H)) dH`` on the cylinder ``|u| <= T``, ``|Y| <= T``."""
    c = lg.root_system(n).two_rho_norm
    radial = (math.exp(c * T) - math.exp(-c * T)) / c
    return radial * _unit_ball_volume(n - 2) * T ** (n - 2) / lebesgue_scale(n)


def _propose(n: int, T: float, size: int, gen):
    """Envelope proposals ``H`` and the thinning decision for each."""
    c = lg.root_system(n).two_rho_norm
    u = _sample_truncated_exp(c, -T, T, size, gen)
    Y = _uniform_ball(n - 2, T, size, gen)
    basis = orthonormal_basis(n)
    H = u[:, None] * basis[0] + Y @ basis[1:]
    keep = lg.norm(H) <= T
    keep &= np.all(np.diff(H, axis=1) <= 0, axis=1)
    with np.errstate(divide="ignore"):
        ratio = np.exp(lg.log_jacobian_J(H) - c * u)
    keep &= gen.random(size) < ratio
    return H, keep


def sample_ball_poisson(n: int, intensity: float, T: float, rng) -> LabeledConfiguration:
    """Poisson process of mean ``intensity * J(H) dH dk`` on the ball of radius ``T``.

    Proposals come from the envelope ``exp(2 rho(H))`` on a cylinder around
    the ``rho_hat`` axis and are thinned by ``1{|H| <= T, H descending} J(H) / exp(2 rho(H))``.
    """
    _check_n(n)
    if not intensity > 0 or not T > 0:
        raise InvalidArgument("intensity and T must be positive")
    rng = as_stream(rng)
    count = poisson_count(intensity * envelope_mass(n, T), rng.split(0))
    H, keep = _propose(n, T, count, rng.split(1).gen)
    H = H[keep]
    K = lg.haar_orthogonal(n, rng.split(2), size=len(H))
    labels = rng.split(3).labels(len(H))
    pts = [SymmetricPoint(K[i], H[i]) for i in range(len(H))]
    return LabeledConfiguration(pts, labels, window={"kind": "ball", "n": n, "T": T,
                                                     "intensity": intensity})


def sample_ball_location(n: int, T: float, rng) -> SymmetricPoint:
    """One point from the normalized volume measure of the radius-``T`` ball."""
    rng = as_stream(rng)
    gen = rng.split(0).gen
    for _ in range(10000):
        H, keep = _propose(n, T, 256, gen)
        if keep.any():
            return SymmetricPoint(lg.haar_orthogonal(n, rng.split(1)), H[np.argmax(keep)])
    raise NumericFailure("could not draw a location from the ball window")


def sample_corona(n: int, c: float | None, s_max: float, rng) -> LabeledConfiguration:
    """Poisson process on ``{(k, s): s <= s_max}`` with mean ``c dk exp(2|rho| s) ds``.

    ``c = None`` selects ``c = 2|rho|``, under which the expected number of
    functions with value at most ``a`` at the origin is ``exp(2|rho| a)``.
    """
    _check_n(n)
    if not math.isfinite(s_max):
        raise InvalidArgument("s_max must be finite")
    rng = as_stream(rng)
    two_rho = lg.root_system(n).two_rho_norm
    c = two_rho if c is None else float(c)
    if not c > 0:
        raise InvalidArgument("intensity scale must be positive")
    count = poisson_count(c * math.exp(two_rho * s_max) / two_rho, rng.split(0))
    s = s_max - rng.split(1).gen.exponential(1.0 / two_rho, count)
    K = lg.haar_orthogonal(n, rng.split(2), size=count)
    labels = rng.split(3).labels(count)
    pts = [CoronaPoint(K[i], float(s[i]), float(labels[i])) for i in range(count)]
    return LabeledConfiguration(pts, labels, window={"kind": "corona", "n": n, "c": c,
                                                     "s_min": -math.inf, "s_max": s_max})


def extend_corona(config: LabeledConfiguration, delta: float, rng) -> LabeledConfiguration:
    """Couple a sample with ceiling ``s_max`` to one with ceiling ``s_max + delta``.

    The new points form an independent Poisson process on ``(s_max, s_max + delta]``.
    """
    if delta < 0:
        raise InvalidArgument("delta must be nonnegative")
    rng = as_stream(rng)
    win = dict(config.window)
    n, c, s_max = win["n"], win["c"], win["s_max"]
    two_rho = lg.root_system(n).two_rho_norm
    mass = c * (math.exp(two_rho * (s_max + delta)) - math.exp(two_rho * s_max)) / two_rho
    count = poisson_count(mass, rng.split(0))
    s = _sample_truncated_exp(two_rho, s_max, s_max + delta, count, rng.split(1).gen)
    K = lg.haar_orthogonal(n, rng.split(2), size=count)
    labels = rng.split(3).labels(count)
    new = [CoronaPoint(K[i], float(s[i]), float(labels[i])) for i in range(count)]
    win["s_max"] = s_max + delta
    return LabeledConfiguration(list(config.points) + new,
                                np.concatenate([config.labels, labels]), window=win)


def corona_values(points, g) -> np.ndarray:
    """Values of every corona function at the group elements ``g`` (shape ``(m, n, n)``).

    Returns an array of shape ``(len(points), m)``.
    """
    g = np.asarray(g, dtype=float)
    if g.ndim == 2:
        g = g[None]
    if len(points) == 0:
        return np.zeros((0, g.shape[0]))
    K = np.stack([p.k for p in points])
    s = np.array([p.s for p in points])
    prod = np.swapaxes(K, 1, 2)[:, None] @ g[None]
    rs = lg.root_system(g.shape[-1])
    H = lg.iwasawa_decompose(prod).h_part
    return -lg.inner(rs.rho_hat, H) + s[:, None]


def certify_radius(config: LabeledConfiguration, s_max: float, probe) -> bool:
    """True when no function outside a ceiling-``s_max`` sample can win at ``probe``.

    Unsampled functions have value above ``s_max`` at the origin, hence above
    ``s_max - d(o, probe)`` at ``probe`` by the 1-Lipschitz bound.
    """
    if len(config) == 0:
        return False
    g = probe.matrix if isinstance(probe, SymmetricPoint) else np.asarray(probe)
    vals = corona_values(config.points, g)[:, 0]
    return bool(vals.min() <= s_max - float(lg.distance_from_origin(g)))


class BallWindow:
    """:class:`~ipvt.pp_core.PoissonWindow` adapter for :func:`sample_ball_poisson`."""

    def __init__(self, n: int, intensity: float, T: float):
        self.n, self.intensity, self.T = n, intensity, T
        self.mass = intensity * ball_volume(n, T)

    def sample(self, rng):
        return sample_ball_poisson(self.n, self.intensity, self.T, rng)

    def sample_location(self, rng):
        return sample_ball_location(self.n, self.T, rng)


class CoronaWindow:
    """:class:`~ipvt.pp_core.PoissonWindow` adapter for :func:`sample_corona`."""

    def __init__(self, n: int, s_max: float, c: float | None = None):
        self.n, self.s_max = n, s_max
        two_rho = lg.root_system(n).two_rho_norm
        self.c = two_rho if c is None else c
        self.mass = self.c * math.exp(two_rho * s_max) / two_rho

    def sample(self, rng):
        return sample_corona(self.n, self.c, self.s_max, rng)

    def sample_location(self, rng):
        rng = as_stream(rng)
        two_rho = lg.root_system(self.n).two_rho_norm
        s = self.s_max - rng.split(0).gen.exponential(1.0 / two_rho)
        return CoronaPoint(lg.haar_orthogonal(self.n, rng.split(1)), float(s))


def _blocks(G: np.ndarray) -> np.ndarray:
    """Stack ``(P, n, n)`` as ``(n, n*P)``, component-major, so that
    ``(v @ blocks)[i*P + p] = (g_p^T v)_i``."""
    P, n, _ = G.shape
    return np.ascontiguousarray(G.transpose(1, 2, 0).reshape(n, n * P))


def _sq(X: np.ndarray, P: int, n: int) -> np.ndarray:
    out = X[:, :P] ** 2
    for i in range(1, n):
        out += X[:, i * P:(i + 1) * P] ** 2
    return out


def _dot(X, Y, P, n):
    out = X[:, :P] * Y[:, :P]
    for i in range(1, n):
        out += X[:, i * P:(i + 1) * P] * Y[:, i * P:(i + 1) * P]
    return out


def corona_value_matrix(points, G, chunk: int = 256) -> np.ndarray:
    """Values of corona functions at ``G`` through exterior-power norms.

    With ``r_i`` the rows of ``k^T g`` and ``L_j = h_{n-j+1} + ... + h_n`` the
    partial sums of the Iwasawa coordinates, ``L_j = log |r_{n-j+1} ^ ... ^ r_n|``.
    For ``j = n - 1`` the wedge is dual to ``g^{-1} k_1`` (``det g = 1``,
    ``k`` in SO(n)); for ``j = 2`` it is a 2 x 2 Gram determinant.  All
    products reduce to matrix multiplications.  Agrees with :func:`corona_values`.

    ``points`` is a list of :class:`CoronaPoint` or a pair ``(K, s)`` of arrays.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim == 2:
        G = G[None]
    P, n, _ = G.shape
    if isinstance(points, tuple):
        K, s = (np.asarray(a, dtype=float) for a in points)
    else:
        if len(points) == 0:
            return np.zeros((0, P))
        K = np.stack([p.k for p in points])
        s = np.array([p.s for p in points], dtype=float)
    rho = lg.root_system(n).rho_hat
    coef = 2 * n * np.array([rho[n - j] - rho[n - j - 1] for j in range(1, n)])
    fwd = _blocks(G)
    inv = _blocks(np.swapaxes(np.linalg.inv(G), -1, -2))
    out = np.empty((K.shape[0], P))
    # the simple roots are evaluated equally by rho_hat, so every coefficient
    # coincides and one logarithm of the product of Gram determinants suffices
    assert np.allclose(coef, coef[0])
    for a in range(0, K.shape[0], chunk):
        Kc = np.ascontiguousarray(np.swapaxes(K[a:a + chunk], 1, 2))
        X1 = Kc[:, 0] @ inv
        prod = _sq(X1, P, n)
        if n >= 3:
            Xn = Kc[:, n - 1] @ fwd
            sq_n = _sq(Xn, P, n)
            prod *= sq_n
        if n == 4:
            X3 = Kc[:, 2] @ fwd
            prod *= sq_n * _sq(X3, P, n) - _dot(Xn, X3, P, n) ** 2
        acc = 0.5 * coef[0] * np.log(prod)
        out[a:a + chunk] = s[a:a + chunk, None] - acc
    return out
