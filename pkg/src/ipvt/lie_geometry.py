"""Numerics for G = SL_n(R), n in {2, 3, 4}, acting on X = G/SO(n).

Conventions
-----------
* Cartan subalgebra elements are trace-zero vectors ``H = (h_1, ..., h_n)``
  standing for ``diag(H)``, with inner product ``<H, H'> = 2n sum h_i h'_i``.
* Iwasawa decomposition uses the order ``g = n exp(H) k`` (unipotent upper
  triangular ``n``, diagonal ``exp(H)``, ``k`` in SO(n)).
* The positive chamber is the cone of descending vectors.

Every function accepts either one matrix of shape ``(n, n)`` or a stack of
shape ``(..., n, n)`` and broadcasts over leading axes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DecompositionFailure, InvalidArgument
from .pp_core import RngStream, as_stream

SUPPORTED_N = (2, 3, 4)

CONSTRUCTION_TOL = 1e-9
TEST_TOL = 1e-8
# relative row norm below which orthonormalization declares the input singular
_SINGULAR_TOL = 1e-13
# singular values ratio below which the Cartan projection is meaningless
_TINY = 1e-280


class SpecialLinearElement:
    """An ``n x n`` real matrix of determinant one.

    Inputs with positive determinant (or any nonzero determinant when ``n`` is
    odd) are rescaled by ``det**(-1/n)`` on construction.
    """

    __slots__ = ("entries",)

    def __init__(self, entries):
        a = np.array(entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidArgument(f"expected a square matrix, got shape {a.shape}")
        n = a.shape[0]
        det = np.linalg.det(a)
        if not np.isfinite(det) or abs(det) < 1e-300:
            raise DecompositionFailure("matrix is singular")
        if det < 0 and n % 2 == 0:
            raise InvalidArgument("negative determinant cannot be renormalized in even dimension")
        scale = math.copysign(abs(det) ** (1.0 / n), det)
        if abs(det - 1.0) > CONSTRUCTION_TOL:
            a = a / scale
        self.entries = a

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def __matmul__(self, other):
        return SpecialLinearElement(self.entries @ np.asarray(other))

    def inverse(self) -> "SpecialLinearElement":
        return SpecialLinearElement(np.linalg.inv(self.entries))

    def __repr__(self):
        return f"SpecialLinearElement({self.entries.tolist()})"


@dataclass
class IwasawaTriple:
    """``g = n_part @ diag(exp(h_part)) @ k_part``."""

    n_part: np.ndarray
    h_part: np.ndarray
    k_part: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.n_part * np.exp(self.h_part)[..., None, :]) @ self.k_part


@dataclass(frozen=True)
class RootSystemData:
    n: int
    rho_hat: np.ndarray
    two_rho_norm: float

    @property
    def rank(self) -> int:
        return self.n - 1


def _mat(g) -> np.ndarray:
    a = np.asarray(g, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise InvalidArgument(f"expected square matrices, got shape {a.shape}")
    return a


def random_sl(n: int, rng, size=None) -> np.ndarray:
    """Gaussian matrices rescaled to determinant one (rows flipped if needed)."""
    rng = as_stream(rng)
    shape = (n, n) if size is None else (size, n, n)
    a = rng.gen.standard_normal(shape)
    det = np.linalg.det(a)
    a[..., 0, :] *= np.sign(det)[..., None]
    return a / (np.abs(det) ** (1.0 / n))[..., None, None]


# ---------------------------------------------------------------- inner product

def inner(H1, H2) -> np.ndarray:
    H1 = np.asarray(H1, dtype=float)
    H2 = np.asarray(H2, dtype=float)
    n = H1.shape[-1]
    return 2 * n * np.sum(H1 * H2, axis=-1)


def norm(H) -> np.ndarray:
    return np.sqrt(inner(H, H))


def rho_eval(H) -> np.ndarray:
    """Half the sum of the positive roots ``h_i - h_j`` (i < j) evaluated at ``H``."""
    H = np.asarray(H, dtype=float)
    n = H.shape[-1]
    w = (n + 1 - 2 * np.arange(1, n + 1)) / 2.0
    return H @ w


_RHO_HAT = {
    2: np.array([1.0, -1.0]) / (2 * math.sqrt(2)),
    3: np.array([1.0, 0.0, -1.0]) / (2 * math.sqrt(3)),
    4: np.array([3.0, 1.0, -1.0, -3.0]) / (4 * math.sqrt(10)),
}


def root_system(n: int) -> RootSystemData:
    if n not in _RHO_HAT:
        raise InvalidArgument(f"unsupported n={n}; expected one of {SUPPORTED_N}")
    rho_hat = _RHO_HAT[n].copy()
    rho_hat.setflags(write=False)
    return RootSystemData(n=n, rho_hat=rho_hat, two_rho_norm=float(2 * rho_eval(rho_hat)))


def jacobian_J(H) -> np.ndarray:
    """``prod_{i<j} |exp(h_i - h_j) - exp(h_j - h_i)|``."""
    H = np.asarray(H, dtype=float)
    n = H.shape[-1]
    out = np.ones(H.shape[:-1])
    for i in range(n):
        for j in range(i + 1, n):
            out = out * np.abs(2 * np.sinh(H[..., i] - H[..., j]))
    return out


def log_jacobian_J(H) -> np.ndarray:
    """``log jacobian_J(H)`` without overflow; ``-inf`` on chamber walls."""
    H = np.asarray(H, dtype=float)
    n = H.shape[-1]
    out = np.zeros(H.shape[:-1])
    with np.errstate(divide="ignore"):
        for i in range(n):
            for j in range(i + 1, n):
                a = np.abs(H[..., i] - H[..., j])
                # log(2 sinh a) = a + log(1 - exp(-2a))
                out = out + a + np.log(-np.expm1(-2 * a))
    return out


# --------------------------------------------------------------- decompositions

def iwasawa_decompose(g) -> IwasawaTriple:
    """Factor ``g = n exp(H) k`` by orthonormalizing the rows bottom-up.

    Modified Gram-Schmidt with one reorthogonalization pass.  The diagonal
    factor is positive, so ``k`` has determinant ``sign(det g)``.
    """
    g = _mat(g)
    n = g.shape[-1]
    rows = np.array(g, copy=True)
    q = np.zeros_like(rows)
    r = np.zeros_like(rows)
    for i in range(n - 1, -1, -1):
        v = rows[..., i, :].copy()
        scale = np.linalg.norm(v, axis=-1)
        for _ in range(2):
            for j in range(i + 1, n):
                c = np.sum(v * q[..., j, :], axis=-1)
                r[..., i, j] += c
                v -= c[..., None] * q[..., j, :]
        d = np.linalg.norm(v, axis=-1)
        if np.any(~(d > _SINGULAR_TOL * scale)):
            raise DecompositionFailure("numerically singular matrix in Iwasawa decomposition")
        r[..., i, i] = d
        q[..., i, :] = v / d[..., None]
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    n_part = r / diag[..., None, :]
    return IwasawaTriple(n_part=n_part, h_part=np.log(diag), k_part=q)


def cartan_vector(g) -> np.ndarray:
    """Descending log singular values of ``g``, projected to trace zero."""
    g = _mat(g)
    try:
        sv = np.linalg.svd(g, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise DecompositionFailure(str(exc)) from exc
    if np.any(~(sv[..., -1] > _TINY * sv[..., 0])) or not np.all(np.isfinite(sv)):
        raise DecompositionFailure("numerically singular matrix in Cartan decomposition")
    a = np.log(sv)
    return a - a.mean(axis=-1, keepdims=True)


def _solve(g1, g2) -> np.ndarray:
    try:
        return np.linalg.solve(g1, g2)
    except np.linalg.LinAlgError as exc:
        raise DecompositionFailure(str(exc)) from exc


def distance(g1, g2) -> np.ndarray:
    """Riemannian distance between ``g1 K`` and ``g2 K``."""
    return norm(cartan_vector(_solve(_mat(g1), _mat(g2))))


def distance_from_origin(g) -> np.ndarray:
    return norm(cartan_vector(g))


def busemann_eval(k, s, g) -> np.ndarray:
    """Horofunction of direction ``k`` and offset ``s`` at ``gK``.

    Equals ``-<rho_hat, H(k^T g)> + s``, where ``H`` is the Iwasawa
    diagonal part, so the value at the origin is ``s``.
    """
    k = _mat(k)
    g = _mat(g)
    rs = root_system(g.shape[-1])
    H = iwasawa_decompose(np.swapaxes(k, -1, -2) @ g).h_part
    return -inner(rs.rho_hat, H) + s


def exp_diag(H) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    return np.exp(H)[..., None, :] * np.eye(H.shape[-1])


def busemann_convergence_gap(k, g, t) -> np.ndarray:
    """``d(gK, k exp(t rho_hat) K) - t - busemann_eval(k, 0, g)``."""
    if not np.all(np.asarray(t) > 0):
        raise InvalidArgument("t must be positive")
    k = _mat(k)
    g = _mat(g)
    rs = root_system(g.shape[-1])
    far = k @ exp_diag(np.multiply.outer(np.asarray(t, dtype=float), rs.rho_hat))
    return distance(g, far) - t - busemann_eval(k, 0.0, g)


def translate_corona(h, k, s):
    """Image of the horofunction data ``(k, s)`` under left translation by ``h``.

    Returns ``(k', s')`` with ``busemann_eval(k', s', h g) == busemann_eval(k, s, g)``
    for every ``g``.  Computed from a K A N factorization of
    ``h k exp(s rho_hat)``, obtained by Iwasawa-decomposing its inverse.
    """
    h = _mat(h)
    k = _mat(k)
    rs = root_system(h.shape[-1])
    m = h @ k @ exp_diag(s * rs.rho_hat)
    tri = iwasawa_decompose(np.linalg.inv(m))
    # m = k_new exp(-H') n'^{-1}
    return np.swapaxes(tri.k_part, -1, -2), -inner(rs.rho_hat, tri.h_part)


def haar_orthogonal(n: int, rng, size=None) -> np.ndarray:
    """Haar-distributed elements of SO(n)."""
    if n < 2:
        raise InvalidArgument("n must be at least 2")
    rng = as_stream(rng)
    shape = (n, n) if size is None else (size, n, n)
    z = rng.gen.standard_normal(shape)
    q, r = np.linalg.qr(z)
    d = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    d[d == 0] = 1.0
    q = q * d[..., None, :]
    det = np.linalg.det(q)
    q[..., 0, :] *= np.sign(det)[..., None]
    return q
