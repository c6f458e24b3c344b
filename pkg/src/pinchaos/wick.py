"""Finite-dimensional Gaussian calculus on the lattice.

Hermite polynomials, Wick products of jointly Gaussian values, pairing
expectations, the cell-averaging operator ``A_N`` and the discrete
U-statistics ``I_m^(N)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import DomainError, NonIntegrableCell

__all__ = [
    "hermite",
    "wick_product",
    "product_from_wick",
    "isserlis",
    "wick_pairing_expectation",
    "QuadSpec",
    "GridFunction",
    "grid_average",
    "toeplitz_quadratic",
    "toeplitz_matvec",
    "u_statistic",
    "u_statistic_variance",
    "hnorm2_box",
    "hnorm2_boxes",
]

WICK_MAX = 20
PAIRING_MAX = 7
DENSE_CAP_N = 256
DENSE_CAP_M = 3


def hermite(n, x):
    """Probabilists' Hermite polynomial ``He_n(x)`` by the three-term recursion."""
    n = int(n)
    if n < 0:
        raise DomainError("Hermite degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    h0 = np.ones_like(x)
    if n == 0:
        return h0 if x.shape else float(h0)
    h1 = x.copy()
    for k in range(1, n):
        h0, h1 = h1, x * h1 - k * h0
    return h1 if x.shape else float(h1)


def _as_cov(cov, m):
    C = np.asarray(cov, dtype=float)
    if C.shape != (m, m):
        raise DomainError(f"covariance must be {m}x{m}, got {C.shape}")
    return C


def wick_product(values, cov):
    """Wick product of jointly Gaussian values.

    Parameters
    ----------
    values : array_like, shape (m,) or (B, m)
        Realizations ``x_1..x_m``; a leading batch axis is allowed.
    cov : array_like, shape (m, m)
        Covariance of the underlying variables.

    Notes
    -----
    Uses ``<>(x_1..x_m) = x_m <>(x_1..x_{m-1}) - sum_i cov(i, m) <>(.. without i)``,
    memoized over index subsets.
    """
    x = np.asarray(values, dtype=float)
    m = x.shape[-1]
    if m > WICK_MAX:
        raise DomainError(f"Wick products limited to m <= {WICK_MAX}")
    C = _as_cov(cov, m)
    if m == 0:
        return np.ones(x.shape[:-1]) if x.ndim > 1 else 1.0
    memo = {0: np.ones(x.shape[:-1])}

    def rec(mask):
        if mask in memo:
            return memo[mask]
        top = mask.bit_length() - 1
        rest = mask & ~(1 << top)
        val = x[..., top] * rec(rest)
        r = rest
        while r:
            i = r.bit_length() - 1
            r &= ~(1 << i)
            if C[i, top] != 0.0:
                val = val - C[i, top] * rec(rest & ~(1 << i))
        memo[mask] = val
        return val

    out = rec((1 << m) - 1)
    return out if x.ndim > 1 else float(out)


def _matchings(items):
    """All partial matchings of ``items`` as (pairs, unmatched)."""
    if not items:
        yield [], []
        return
    first, rest = items[0], items[1:]
    for pairs, free in _matchings(rest):
        yield pairs, [first] + free
    for j, other in enumerate(rest):
        remaining = rest[:j] + rest[j + 1:]
        for pairs, free in _matchings(remaining):
            yield [(first, other)] + pairs, free


def product_from_wick(values, cov):
    """Ordinary product rebuilt from Wick products.

    ``x_1 ... x_m = sum over partial pairings P of prod_{(i,j) in P} cov(i,j)
    times the Wick product of the unpaired values``. Small ``m`` only.
    """
    x = np.asarray(values, dtype=float)
    m = x.shape[-1]
    C = _as_cov(cov, m)
    total = 0.0
    for pairs, free in _matchings(list(range(m))):
        w = math.prod(C[i, j] for i, j in pairs)
        if w == 0.0:
            continue
        sub = x[..., free]
        total = total + w * wick_product(sub, C[np.ix_(free, free)])
    return total


def isserlis(cov):
    """``E[x_1 ... x_m]`` for centered Gaussians: sum over perfect pairings."""
    C = np.asarray(cov, dtype=float)
    m = C.shape[0]
    if m % 2:
        return 0.0

    def haf(idx):
        if not idx:
            return 1.0
        a, rest = idx[0], idx[1:]
        return sum(C[a, b] * haf(rest[:j] + rest[j + 1:]) for j, b in enumerate(rest))

    return haf(tuple(range(m)))


def _lag_cov(cov):
    if isinstance(cov, np.ndarray):
        return lambda a, b: cov[a, b]
    return lambda a, b: float(cov(a - b))


def wick_pairing_expectation(indices_a, indices_b, cov):
    """``E[<>omega_A <>omega_B]``: permanent of the cross-covariance.

    ``cov`` is either a kernel callable on lags or a matrix indexed by the
    given indices.
    """
    A, B = list(indices_a), list(indices_b)
    if len(A) > PAIRING_MAX or len(B) > PAIRING_MAX:
        raise DomainError(f"pairing expectations limited to sizes <= {PAIRING_MAX}")
    if len(A) != len(B):
        return 0.0
    c = _lag_cov(cov)
    K = np.array([[c(a, b) for b in B] for a in A]).reshape(len(A), len(B))
    p = len(A)
    return math.fsum(
        math.prod(K[i, s[i]] for i in range(p)) for s in itertools.permutations(range(p))
    )


# ---------------------------------------------------------------------------
# cell averages


@dataclass
class QuadSpec:
    """Per-cell quadrature settings.

    Attributes
    ----------
    nodes : int
        Gauss-Legendre nodes per axis on smooth cells.
    mc_points : int
        Monte Carlo points on cells touching a singularity.
    rng : numpy Generator or None
        Source for the Monte Carlo fallback.
    antiderivative : callable or None
        For ``m = 1``, an exact antiderivative ``F``; overrides both rules.
    singular : callable or None
        ``singular(lo, hi) -> bool``; defaults to a check for non-finite
        values at the cell corners.
    instability_tol : float
        Largest accepted relative standard error of the fallback mean.
    """

    nodes: int = 3
    mc_points: int = 64
    rng: object = None
    antiderivative: object = None
    singular: object = None
    instability_tol: float = 0.5


def _corners(lo, hi):
    m = len(lo)
    pts = np.array(list(itertools.product(*[(lo[i], hi[i]) for i in range(m)])))
    return pts


def grid_average(f, N, m, cell, quad_spec=None):
    """Average of ``f`` over the cell ``prod ((i_k - 1)/N, i_k/N]``.

    ``f`` takes an array of shape (P, m) and returns P values. Returns
    ``(value, se)``; ``se`` is zero for deterministic rules.
    """
    qs = quad_spec or QuadSpec()
    cell = np.atleast_1d(np.asarray(cell, dtype=int))
    if cell.shape != (m,):
        raise DomainError(f"cell must have {m} indices")
    lo = (cell - 1) / N
    hi = cell / N
    if qs.antiderivative is not None and m == 1:
        F = qs.antiderivative
        return float((F(hi[0]) - F(lo[0])) * N), 0.0
    if qs.singular is not None:
        sing = bool(qs.singular(lo, hi))
    else:
        with np.errstate(all="ignore"):
            sing = not np.all(np.isfinite(f(_corners(lo, hi))))
    if not sing:
        x, w = leggauss(qs.nodes)
        x = (x + 1) / 2
        w = w / 2
        grids = np.meshgrid(*([x] * m), indexing="ij")
        pts = lo + np.stack([g.ravel() for g in grids], axis=1) * (hi - lo)
        ww = np.prod(np.stack(np.meshgrid(*([w] * m), indexing="ij")).reshape(m, -1), axis=0)
        return float(np.dot(ww, f(pts))), 0.0
    rng = qs.rng if qs.rng is not None else np.random.default_rng(0)
    U = rng.random((qs.mc_points, m))
    pts = lo + (1.0 - U) * (hi - lo)
    with np.errstate(all="ignore"):
        vals = np.asarray(f(pts), dtype=float)
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(len(vals)))
    if not (np.all(np.isfinite(vals)) and se <= qs.instability_tol * abs(mean)):
        raise NonIntegrableCell(f"Monte Carlo cell average unstable on cell {tuple(cell)}")
    return mean, se


@dataclass(eq=False)
class GridFunction:
    """Function of ``m`` variables on ``[0,1]^m`` with its cell averages.

    Either ``func`` (callable on arrays of shape (P, m)) or ``values``
    (dense cell averages, shape ``(N,)*m``) must be supplied. ``factors``
    marks a tensor product of one-dimensional GridFunctions.
    """

    m: int
    N: int
    func: object = None
    values: np.ndarray = None
    factors: tuple = None
    quad_spec: QuadSpec = None
    se: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_callable(cls, func, N, m=1, quad_spec=None):
        return cls(m=m, N=N, func=func, quad_spec=quad_spec)

    @classmethod
    def indicator(cls, lo, hi, N):
        """``1_(lo, hi]`` in one variable; exact cell averages."""
        i = np.arange(1, N + 1)
        a = np.maximum((i - 1) / N, lo)
        b = np.minimum(i / N, hi)
        vals = np.clip(b - a, 0, None) * N
        f = lambda t: ((t[:, 0] > lo) & (t[:, 0] <= hi)).astype(float)
        return cls(m=1, N=N, func=f, values=vals)

    @classmethod
    def tensor(cls, *factors):
        N = factors[0].N
        if any(g.N != N or g.m != 1 for g in factors):
            raise DomainError("tensor factors must be one-dimensional on a common grid")
        return cls(m=len(factors), N=N, factors=tuple(factors))

    def cell_values(self):
        """Dense cell averages, computed once."""
        if self.values is not None:
            return self.values
        if self.factors is not None:
            out = self.factors[0].cell_values()
            for g in self.factors[1:]:
                out = np.multiply.outer(out, g.cell_values())
            self.values = out
            return out
        N, m = self.N, self.m
        vals = np.empty((N,) * m)
        se = np.zeros((N,) * m)
        for cell in itertools.product(range(1, N + 1), repeat=m):
            v, s = grid_average(self.func, N, m, cell, self.quad_spec)
            vals[tuple(c - 1 for c in cell)] = v
            se[tuple(c - 1 for c in cell)] = s
        self.values, self.se = vals, se
        return vals


# ---------------------------------------------------------------------------
# Toeplitz products and U-statistics


def _toeplitz_row_fft(kernel, N):
    M = 1 << max(1, (2 * N - 1).bit_length())
    row = np.zeros(M)
    row[:N] = kernel(np.arange(N))
    row[M - N + 1:] = kernel(np.arange(N - 1, 0, -1))
    return np.fft.rfft(row), M


def toeplitz_matvec(kernel, v):
    """``Gamma v`` for ``Gamma_ij = gamma(i - j)``; ``v`` has shape (..., N)."""
    v = np.asarray(v, dtype=float)
    N = v.shape[-1]
    lam, M = _toeplitz_row_fft(kernel, N)
    return np.fft.irfft(np.fft.rfft(v, n=M, axis=-1) * lam, n=M, axis=-1)[..., :N]


def toeplitz_quadratic(kernel, V, W=None):
    """Row-wise ``v^T Gamma w`` for stacks of vectors of shape (..., N)."""
    V = np.asarray(V, dtype=float)
    W = V if W is None else np.asarray(W, dtype=float)
    return np.sum(toeplitz_matvec(kernel, V) * W, axis=-1)


def _gamma_matrix(kernel, N):
    i = np.arange(N)
    return kernel(i[:, None] - i[None, :])


def u_statistic(f, m, N, environment, kernel):
    """Discrete U-statistic ``N^{-mH} sum_n A_N(f)(n/N) <>omega_n``.

    Parameters
    ----------
    f : GridFunction
    environment : ndarray, shape (N,) or (R, N)
    kernel : CorrelationKernel

    Tensor-product ``f`` uses the Wick product of the one-dimensional
    statistics; otherwise a dense sum is used for ``m <= 3`` and
    ``N <= 256``.
    """
    omega = np.asarray(environment, dtype=float)
    if omega.shape[-1] != N or f.m != m or f.N != N:
        raise DomainError("grid function, environment and N disagree")
    H = kernel.H
    scale = N ** (-H)
    if m == 0:
        return np.ones(omega.shape[:-1]) if omega.ndim > 1 else 1.0
    if f.factors is not None:
        G = np.stack([g.cell_values() for g in f.factors])
        Y = scale * omega @ G.T
        C = scale ** 2 * np.sum(toeplitz_matvec(kernel, G)[:, None, :] * G[None, :, :], axis=-1)
        return wick_product(Y, C)
    if m == 1:
        return scale * omega @ f.cell_values()
    if m > DENSE_CAP_M or N > DENSE_CAP_N:
        raise DomainError(
            f"dense U-statistic limited to m <= {DENSE_CAP_M} and N <= {DENSE_CAP_N}; "
            "supply a tensor product"
        )
    F = f.cell_values()
    Gm = _gamma_matrix(kernel, N)
    if m == 2:
        quad = np.einsum("...a,ab,...b->...", omega, F, omega)
        return scale ** 2 * (quad - np.sum(F * Gm))
    cubic = np.einsum("...a,...b,...c,abc->...", omega, omega, omega, F, optimize=True)
    lin = (np.einsum("abc,ab->c", F, Gm) + np.einsum("abc,ac->b", F, Gm)
           + np.einsum("abc,bc->a", F, Gm))
    return scale ** 3 * (cubic - omega @ lin)


def u_statistic_variance(f, N, kernel):
    """Exact variance of ``I_1^(N)(f)``: ``N^{-2H} F^T Gamma F``."""
    F = f.cell_values() if isinstance(f, GridFunction) else np.asarray(f, dtype=float)
    return float(N ** (-2 * kernel.H) * toeplitz_quadratic(kernel, F))


def _box_pair(a1, a2, b1, b2, H):
    """``int_(a1,a2] int_(b1,b2] |t-s|^{2H-2}`` for ``a2 <= b1`` or equal boxes."""
    p = 2 * H
    F = lambda x: np.abs(x) ** p
    return (F(b2 - a1) - F(b2 - a2) - F(b1 - a1) + F(b1 - a2)) / (p * (p - 1))


def hnorm2_box(lo, hi, H):
    """``||1_(lo,hi]||^2_H = (hi - lo)^{2H} / (H (2H - 1))``."""
    return float(max(hi - lo, 0.0) ** (2 * H) / (H * (2 * H - 1)))


def hnorm2_boxes(box_a, box_b, H):
    """``<1_A, 1_B>_H`` for intervals ``A``, ``B`` that are equal or disjoint."""
    (a1, a2), (b1, b2) = sorted([tuple(box_a), tuple(box_b)])
    if (a1, a2) == (b1, b2):
        return hnorm2_box(a1, a2, H)
    if a2 > b1:
        raise DomainError("boxes must be equal or disjoint")
    return float(_box_pair(a1, a2, b1, b2, H))
