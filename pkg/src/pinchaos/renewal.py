"""Discrete renewal processes with regularly varying inter-arrival laws.

The gap law is ``q(n) = c * L_base(n) / n**(1 + alpha)`` with ``c`` chosen so
that the total mass is one. The constant is folded into the *effective*
slowly varying function ``L(n) = c * L_base(n)``; every scaling and
asymptotic formula elsewhere in the package uses this effective ``L``.
"""

from __future__ import annotations

import enum
import hashlib
import io
import logging
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import logsumexp

from .errors import DomainError, RenewalUnderflow, TailNotConverged

log = logging.getLogger(__name__)

__all__ = [
    "Regime",
    "SlowlyVaryingSpec",
    "GapLaw",
    "RenewalMass",
    "build_gap_law",
    "renewal_mass",
    "renewal_mass_log",
    "truncated_mean",
    "sample_renewal_free",
    "sample_renewal_pinned",
    "free_occupancy",
    "pinned_occupancy",
    "save_law_csv",
    "load_law_csv",
    "cached_gap_law",
]

PINNED_TABLE_CAP = 2048


class Regime(str, enum.Enum):
    SUB_UNIT = "SubUnit"
    FINITE_MEAN = "FiniteMean"
    MARGINAL = "MarginalInfiniteMean"


@dataclass(frozen=True)
class SlowlyVaryingSpec:
    """Base slowly varying factor of the gap law.

    ``kind="const"`` evaluates to ``c0``; ``kind="logpow"`` evaluates to
    ``(1 + log n)**r``.
    """

    kind: str = "const"
    c0: float = 1.0
    r: float = 0.0

    def __post_init__(self):
        if self.kind not in ("const", "logpow"):
            raise DomainError(f"unknown slowly varying kind {self.kind!r}")
        if self.kind == "const" and not self.c0 > 0:
            raise DomainError("constant slowly varying factor must be positive")

    @classmethod
    def constant(cls, c0=1.0):
        return cls("const", c0=float(c0))

    @classmethod
    def log_power(cls, r):
        return cls("logpow", r=float(r))

    @classmethod
    def parse(cls, text):
        """Parse ``"const:c"`` or ``"logpow:r"``."""
        kind, _, value = str(text).partition(":")
        kind = kind.strip().lower()
        if kind == "const":
            return cls.constant(float(value) if value else 1.0)
        if kind == "logpow":
            return cls.log_power(float(value) if value else 0.0)
        raise DomainError(f"cannot parse slowly varying spec {text!r}")

    def label(self):
        return f"const:{self.c0!r}" if self.kind == "const" else f"logpow:{self.r!r}"

    def params(self):
        return (self.c0,) if self.kind == "const" else (self.r,)

    def __call__(self, n):
        n = np.asarray(n, dtype=float)
        if self.kind == "const":
            return np.full(n.shape, self.c0) if n.shape else self.c0
        return (1.0 + np.log(n)) ** self.r

    def log_derivative(self, x):
        """d/dx log L_base(x)."""
        if self.kind == "const":
            return 0.0
        return self.r / (x * (1.0 + math.log(x)))


def _tail_integral(sv, s, b):
    """Integral of ``L_base(x) x**(-s)`` over ``[b, inf)``."""
    if sv.kind == "const":
        if s <= 1:
            return math.inf
        return sv.c0 * b ** (1.0 - s) / (s - 1.0)
    # substitute v = 1 + log x; integrand becomes v**r exp(-(s-1)(v-1))
    a = s - 1.0
    vb = 1.0 + math.log(b)
    if a <= 0 and sv.r >= -1:
        return math.inf
    if a == 0:
        return vb ** (sv.r + 1.0) / (-(sv.r + 1.0))
    val, _ = integrate.quad(
        lambda w: ((vb + w) / vb) ** sv.r * math.exp(-a * w),
        0.0, math.inf, epsabs=0.0, epsrel=1e-13, limit=200,
    )
    return val * vb ** sv.r * math.exp(-a * (vb - 1.0))


def _tail_sum(sv, s, n_max):
    """Estimate ``sum_{n > n_max} L_base(n) n**(-s)`` and its error.

    Midpoint Euler-Maclaurin: the sum equals the integral from
    ``n_max + 1/2`` minus ``f'(n_max + 1/2) / 24`` plus a remainder of order
    ``f'''``.
    """
    b = n_max + 0.5
    f_b = float(sv(b)) * b ** (-s)
    dlog = sv.log_derivative(b) - s / b
    f1 = f_b * dlog
    est = _tail_integral(sv, s, b) - f1 / 24.0
    # power-law proxy for f'''
    f3 = f_b * s * (s + 1.0) * (s + 2.0) / b ** 3
    err = 7.0 / 5760.0 * abs(f3)
    return est, err


@dataclass(frozen=True, eq=False)
class GapLaw:
    """Inter-arrival law with tables up to an explicit horizon ``n_max``.

    Arrays are indexed by the gap length: ``q[0] = 0`` and ``q[n]`` is the
    probability of a gap of length ``n``. ``cdf[n]`` and ``survival[n]``
    are the cumulative and residual masses, with ``survival[0] = 1``.
    """

    alpha: float
    sv: SlowlyVaryingSpec
    n_max: int
    norm_c: float
    q: np.ndarray = field(repr=False)
    cdf: np.ndarray = field(repr=False)
    survival: np.ndarray = field(repr=False)
    tail_mass: float
    regime: Regime
    mean: float = math.inf

    def L(self, n):
        """Effective slowly varying function ``norm_c * L_base(n)``."""
        return self.norm_c * self.sv(n)

    @property
    def C_alpha(self):
        a = self.alpha
        return a * math.sin(math.pi * a) / math.pi

    def l(self, N):
        """Truncated mean ``sum_{n <= N} n q(n)``."""
        return truncated_mean(self, N)

    def key(self):
        return (float(self.alpha), self.sv.kind, self.sv.params(), int(self.n_max))



def _classify(alpha, sv, q, n_max, norm_c, mean_threshold=0.05):
    """Regime and mean of a tabulated law."""
    if alpha < 1:
        return Regime.SUB_UNIT, math.inf
    n = np.arange(1, n_max + 1, dtype=float)
    head = math.fsum((n * q[1:])[::-1])
    if alpha > 1:
        regime = Regime.FINITE_MEAN
    else:
        lo = int(math.isqrt(n_max))
        growth = (head - float(np.dot(n[:lo], q[1:lo + 1]))) / head
        regime = Regime.FINITE_MEAN if growth < mean_threshold else Regime.MARGINAL
    if regime is Regime.MARGINAL:
        return regime, math.inf
    mtail, _ = _tail_sum(sv, alpha, n_max)
    mean = head + norm_c * mtail
    if not math.isfinite(mean):
        return Regime.MARGINAL, math.inf
    return regime, mean

def build_gap_law(alpha, sv=None, n_max=2 ** 16, tail_tol=1e-10, mean_threshold=0.05):
    """Tabulate the gap law ``q(n) proportional to L_base(n) / n^(1+alpha)``.

    The normaliser is the partial sum to ``n_max`` plus a corrected integral
    estimate of the tail. For ``alpha == 1`` the regime is decided by how
    much the truncated mean still grows between ``sqrt(n_max)`` and
    ``n_max``: a relative growth below ``mean_threshold`` means finite mean.
    """
    alpha = float(alpha)
    if not alpha > 0:
        raise DomainError(f"tail exponent alpha must be positive, got {alpha}")
    n_max = int(n_max)
    if n_max < 2:
        raise DomainError("n_max must be at least 2")
    if not tail_tol > 0:
        raise DomainError("tail_tol must be positive")
    sv = SlowlyVaryingSpec.constant() if sv is None else sv

    n = np.arange(1, n_max + 1, dtype=float)
    base = sv(n) * n ** (-(1.0 + alpha))
    partial = math.fsum(base[::-1])
    tail, err = _tail_sum(sv, 1.0 + alpha, n_max)
    total = partial + tail
    if not err <= tail_tol * total:
        raise TailNotConverged(
            f"tail estimate relative error {err / total:.2e} exceeds {tail_tol:.1e}; "
            f"increase n_max={n_max}"
        )
    norm_c = 1.0 / total
    q = np.zeros(n_max + 1)
    q[1:] = norm_c * base
    cdf = np.cumsum(q)
    tail_mass = norm_c * tail
    survival = np.empty(n_max + 1)
    # reverse accumulation keeps small residual masses accurate
    survival[n_max] = tail_mass
    survival[:n_max] = tail_mass + np.cumsum(q[:0:-1])[::-1]
    survival[0] = 1.0

    regime, mean = _classify(alpha, sv, q, n_max, norm_c, mean_threshold)
    return GapLaw(alpha, sv, n_max, norm_c, q, cdf, survival, float(tail_mass), regime, mean)


@dataclass(frozen=True, eq=False)
class RenewalMass:
    """``u[n] = P(n in tau)`` for ``0 <= n <= N``."""

    u: np.ndarray = field(repr=False)
    law: GapLaw = field(repr=False)
    N: int

    def __getitem__(self, n):
        return self.u[n]


def _check_horizon(law, N):
    if N > law.n_max:
        raise DomainError(f"N={N} exceeds the law table horizon n_max={law.n_max}")


def renewal_mass(law, N):
    """Renewal mass function by the convolution recursion.

    ``u(n) = sum_{k=1}^{n} q(k) u(n-k)`` with ``u(0) = 1``; O(N^2).
    """
    N = int(N)
    _check_horizon(law, N)
    u = np.zeros(N + 1)
    u[0] = 1.0
    # qrev[N - n + j] = q(n - j)
    qrev = law.q[N:0:-1].copy()
    for n in range(1, N + 1):
        u[n] = np.dot(u[:n], qrev[N - n:])
    if np.any(u[1:] <= 0):
        warnings.warn("renewal mass underflowed to zero; use renewal_mass_log", RuntimeWarning)
    return RenewalMass(u, law, N)


def renewal_mass_log(law, N):
    """Log of the renewal mass function, for laws where ``u`` underflows."""
    N = int(N)
    _check_horizon(law, N)
    with np.errstate(divide="ignore"):
        logq = np.log(law.q)
    lu = np.full(N + 1, -np.inf)
    lu[0] = 0.0
    for n in range(1, N + 1):
        lu[n] = logsumexp(lu[:n] + logq[n:0:-1])
    return lu


def truncated_mean(law, N):
    """``l(N) = sum_{n <= N} n q(n)``."""
    N = int(N)
    _check_horizon(law, N)
    n = np.arange(N + 1, dtype=float)
    return math.fsum(n[1:] * law.q[1:N + 1])


def _gap_from_uniform(law, U):
    # smallest k with U < cdf[k]; k = n_max + 1 encodes a gap beyond the table
    return np.searchsorted(law.cdf, U, side="right")


def sample_renewal_free(law, N, rng):
    """One free-boundary path ``tau`` intersected with ``[0, N]``.

    Returns the strictly increasing renewal epochs, starting with 0.
    """
    N = int(N)
    _check_horizon(law, N)
    pts = [0]
    pos = 0
    while True:
        pos += int(_gap_from_uniform(law, rng.random()))
        if pos > N:
            return np.asarray(pts, dtype=np.int64)
        pts.append(pos)


def free_occupancy(law, N, uniforms):
    """Occupation indicators of free paths driven by given uniforms.

    Parameters
    ----------
    uniforms : ndarray, shape (M, N + 1)
        Row ``r`` supplies the uniforms consumed, in order, by path ``r``.
        ``N + 1`` draws always suffice because every gap is at least one.

    Returns
    -------
    ndarray of bool, shape (M, N)
        Entry ``[r, n - 1]`` tells whether ``n`` is a renewal of path ``r``.
    """
    N = int(N)
    _check_horizon(law, N)
    uniforms = np.asarray(uniforms)
    M = uniforms.shape[0]
    occ = np.zeros((M, N + 1), dtype=bool)
    pos = np.zeros(M, dtype=np.int64)
    alive = np.arange(M)
    col = 0
    while alive.size:
        pos_a = pos[alive] + _gap_from_uniform(law, uniforms[alive, col])
        ok = pos_a <= N
        alive = alive[ok]
        pos[alive] = pos_a[ok]
        occ[alive, pos_a[ok]] = True
        col += 1
    return occ[:, 1:]


def _pinned_table(law, mass, N):
    """Cumulative transition table of the Doob transform, row ``j`` = position."""
    u = mass.u
    j = np.arange(N)[:, None]
    k = np.arange(1, N + 1)[None, :]
    rem = N - j - k
    with np.errstate(invalid="ignore"):
        P = np.where(rem >= 0, law.q[np.minimum(k, law.n_max)] * u[np.maximum(rem, 0)], 0.0)
    P /= u[N - j]
    cum = np.minimum(np.cumsum(P, axis=1), 1.0)
    last = (N - np.arange(N)) - 1
    cum[np.arange(N), last] = 1.0
    cum[k - 1 >= (N - j)] = 1.0
    return cum


def _check_pinned(mass, N):
    if mass.N < N:
        raise DomainError("renewal mass table does not cover [0, N]")
    if not mass.u[N] > 1e-300:
        raise RenewalUnderflow(f"u({N}) is numerically zero; conditioning is ill-defined")


def sample_renewal_pinned(law, mass, N, rng):
    """One path conditioned on ``N in tau``, via the Doob h-transform.

    From position ``j`` the next gap ``k`` has probability
    ``q(k) u(N - j - k) / u(N - j)``.
    """
    N = int(N)
    _check_pinned(mass, N)
    u = mass.u
    pts = [0]
    pos = 0
    while pos < N:
        rem = N - pos
        k = np.arange(1, rem + 1)
        w = law.q[k] * u[rem - k] / u[rem]
        c = np.cumsum(w)
        step = int(np.searchsorted(c, rng.random() * c[-1], side="right")) + 1
        pos += min(step, rem)
        pts.append(pos)
    return np.asarray(pts, dtype=np.int64)


def pinned_occupancy(law, mass, N, uniforms):
    """Occupation indicators of pinned paths; ``uniforms`` has shape (M, N)."""
    N = int(N)
    _check_pinned(mass, N)
    uniforms = np.asarray(uniforms)
    M = uniforms.shape[0]
    occ = np.zeros((M, N + 1), dtype=bool)
    occ[:, N] = True
    if N > PINNED_TABLE_CAP:
        for r in range(M):
            it = iter(uniforms[r])
            pts = sample_renewal_pinned(law, mass, N, _ReplayRng(it))
            occ[r, pts] = True
        return occ[:, 1:]
    cum = _pinned_table(law, mass, N)
    flat = (cum + np.arange(N)[:, None]).ravel()
    pos = np.zeros(M, dtype=np.int64)
    alive = np.arange(M)
    col = 0
    while alive.size:
        j = pos[alive]
        idx = np.searchsorted(flat, j + uniforms[alive, col], side="right")
        step = np.minimum(idx - j * N + 1, N - j)
        new = j + step
        pos[alive] = new
        occ[alive, new] = True
        alive = alive[new < N]
        col += 1
    return occ[:, 1:]


class _ReplayRng:
    def __init__(self, it):
        self._it = it

    def random(self):
        return float(next(self._it))


# ---------------------------------------------------------------------------
# CSV cache of law tables

def law_cache_name(alpha, sv, n_max):
    params = "_".join(f"{p!r}" for p in sv.params())
    return f"law_a{float(alpha)!r}_{sv.kind}_{params}_n{int(n_max)}.csv"


def law_to_csv(law):
    buf = io.StringIO()
    buf.write("n,q,cdf,survival\n")
    for n in range(law.n_max + 1):
        buf.write(f"{n},{law.q[n]:.17g},{law.cdf[n]:.17g},{law.survival[n]:.17g}\n")
    return buf.getvalue()


def save_law_csv(law, path):
    text = law_to_csv(law)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return hashlib.sha256(text.encode()).hexdigest()


def load_law_csv(path, alpha, sv, mean_threshold=0.05):
    """Rebuild a :class:`GapLaw` from a cached table."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n_max = int(data[-1, 0])
    q, cdf, survival = data[:, 1].copy(), data[:, 2].copy(), data[:, 3].copy()
    norm_c = q[1] / float(sv(1.0))
    regime, mean = _classify(float(alpha), sv, q, n_max, norm_c, mean_threshold)
    return GapLaw(float(alpha), sv, n_max, float(norm_c), q, cdf, survival,
                  float(survival[n_max]), regime, mean)


def cached_gap_law(alpha, sv=None, n_max=2 ** 16, cache_dir=None, **kw):
    """Build a law, reading or writing the CSV cache when ``cache_dir`` is set."""
    sv = SlowlyVaryingSpec.constant() if sv is None else sv
    if cache_dir is None:
        return build_gap_law(alpha, sv, n_max, **kw)
    os.makedirs(cache_dir, exist_ok=True)
    path = os.path.join(cache_dir, law_cache_name(alpha, sv, n_max))
    if os.path.exists(path):
        return load_law_csv(path, alpha, sv)
    law = build_gap_law(alpha, sv, n_max, **kw)
    save_law_csv(law, path)
    return law
