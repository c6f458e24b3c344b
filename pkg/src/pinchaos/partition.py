"""Discrete partition functions of the pinning model.

Exact recursions for the plain partition functions, Monte Carlo and
brute-force enumeration for the Wick-ordered ones, the intermediate
disorder scalings and replica second moments.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ._stats import batched_se, mean_of_exp
from .errors import DomainError, NonFiniteInput, RenewalUnderflow
from .renewal import Regime, free_occupancy, pinned_occupancy, renewal_mass, truncated_mean
from .wick import toeplitz_matvec, toeplitz_quadratic

__all__ = [
    "Mode",
    "Provenance",
    "Scalings",
    "PartitionEstimate",
    "make_scalings",
    "exact_partition_free",
    "exact_partition_conditioned",
    "wick_exponent",
    "wick_exponents",
    "sample_paths",
    "mc_wick_partition",
    "wick_partition_pool",
    "enumerate_partition",
    "replica_second_moment_wick",
    "sup_bound_diagnostics",
]

ENUM_CAP = 22
REPLICA_ENUM_CAP = 11
RESCALE_AT = 600.0


class Mode(str, enum.Enum):
    FREE_PLAIN = "FreePlain"
    COND_PLAIN = "ConditionedPlain"
    FREE_WICK = "FreeWick"
    COND_WICK = "ConditionedWick"

    @property
    def conditioned(self):
        return self in (Mode.COND_PLAIN, Mode.COND_WICK)

    @property
    def wick(self):
        return self in (Mode.FREE_WICK, Mode.COND_WICK)

    @classmethod
    def parse(cls, text):
        """Accept ``"free,wick"`` style pairs as well as the enum values."""
        if isinstance(text, Mode):
            return text
        t = str(text).replace(" ", "")
        try:
            return cls(t)
        except ValueError:
            pass
        parts = set(t.lower().split(","))
        table = {
            frozenset({"free", "plain"}): cls.FREE_PLAIN,
            frozenset({"cond", "plain"}): cls.COND_PLAIN,
            frozenset({"free", "wick"}): cls.FREE_WICK,
            frozenset({"cond", "wick"}): cls.COND_WICK,
        }
        try:
            return table[frozenset(parts)]
        except KeyError:
            raise DomainError(f"mode must be one of free|cond x plain|wick, got {text!r}") from None


class Provenance(str, enum.Enum):
    RECURSION = "Recursion"
    MONTE_CARLO = "MonteCarlo"
    ENUMERATION = "Enumeration"


@dataclass(frozen=True)
class Scalings:
    beta_N: float
    h_N: float
    regime: Regime
    N: int
    beta_hat: float
    h_hat: float


@dataclass(frozen=True)
class PartitionEstimate:
    """A partition functional, carried in log space.

    For Monte Carlo estimates ``mean`` and ``standard_error`` refer to the
    (linear) value and ``log_value = log(mean)``.
    """

    log_value: float
    mode: Mode
    provenance: Provenance
    mean: float = math.nan
    standard_error: float = math.nan
    M: int = 0

    @property
    def value(self):
        return math.exp(self.log_value)

    def __post_init__(self):
        if self.provenance is Provenance.MONTE_CARLO:
            if self.M < 2 or not self.standard_error >= 0:
                raise ValueError("Monte Carlo estimates need M >= 2 and SE >= 0")


def make_scalings(law, kernel, N, beta_hat, h_hat, L_convention="effective"):
    """Intermediate disorder scalings ``beta_N``, ``h_N``.

    Parameters
    ----------
    L_convention : {"effective", "unit"}
        ``"effective"`` uses the normalized ``L(N) = norm_c L_base(N)`` (or
        ``l(N)``); ``"unit"`` sets ``L = l = 1`` in the scalings, the
        convention under which the criticality heuristic is phrased.
    """
    N = int(N)
    if L_convention not in ("effective", "unit"):
        raise DomainError(f"unknown L convention {L_convention!r}")
    unit = L_convention == "unit"
    if N > law.n_max:
        raise DomainError(f"N={N} exceeds the law table horizon n_max={law.n_max}")
    H, a = kernel.H, law.alpha
    if law.regime is Regime.SUB_UNIT:
        LN = 1.0 if unit else float(law.L(N))
        b = beta_hat * LN / N ** (a + H - 1)
        h = h_hat * LN / N ** a
    elif law.regime is Regime.FINITE_MEAN:
        b = beta_hat / N ** H
        h = h_hat / N
    else:
        lN = 1.0 if unit else truncated_mean(law, N)
        b = beta_hat * lN / N ** H
        h = h_hat * lN / N
    return Scalings(float(b), float(h), law.regime, N, float(beta_hat), float(h_hat))


def _check_omega(omega, N):
    omega = np.asarray(omega, dtype=float)
    if omega.shape[-1] < N:
        raise DomainError("environment does not cover [1, N]")
    omega = omega[..., :N]
    if not np.all(np.isfinite(omega)):
        raise NonFiniteInput("environment contains non-finite values")
    return omega


def _z_recursion(omega, beta, h, law, N):
    """Scaled ``z(0..N)`` with per-row log shifts; rows are environments.

    Returns ``(zs, shift)`` with ``z(n) = zs[:, n] * exp(shift)`` for the
    entries written after the last rescale, and ``log z(N)`` exactly.
    """
    R = omega.shape[0]
    a = beta * omega + h
    zs = np.zeros((N + 1, R))
    zs[0] = 1.0
    shift = np.zeros(R)
    qrev = law.q[N:0:-1].copy()
    logzN = np.zeros(R)
    for n in range(1, N + 1):
        conv = qrev[N - n:] @ zs[:n]
        with np.errstate(divide="ignore"):
            lz = a[:, n - 1] + np.log(conv)
        if n == N:
            logzN = lz + shift
        big = lz > RESCALE_AT
        if np.any(big):
            zs[:n, big] *= np.exp(-lz[big])
            shift[big] += lz[big]
            lz[big] = 0.0
        zs[n] = np.exp(lz)
    return zs, shift, logzN


def exact_partition_free(omega, beta, h, law, N):
    """Free-boundary partition function by the last-renewal decomposition.

    ``z(n) = exp(beta omega_n + h) sum_{k<n} z(k) q(n-k)`` and
    ``Z_N = sum_n z(n) S(N-n)``. ``omega`` may carry a leading batch axis,
    in which case an array of log values is returned instead of a single
    :class:`PartitionEstimate`.
    """
    N = int(N)
    omega = _check_omega(omega, N)
    batch = omega.ndim > 1
    om = omega.reshape(-1, N)
    zs, shift, _ = _z_recursion(om, beta, h, law, N)
    S = law.survival[N::-1]
    logZ = np.log(S @ zs) + shift
    if batch:
        return logZ
    return PartitionEstimate(float(logZ[0]), Mode.FREE_PLAIN, Provenance.RECURSION)


def exact_partition_conditioned(omega, beta, h, law, mass, N):
    """Conditioned partition function ``z(N) / u(N)``."""
    N = int(N)
    if not mass.u[N] > 1e-300:
        raise RenewalUnderflow(f"u({N}) is numerically zero")
    omega = _check_omega(omega, N)
    batch = omega.ndim > 1
    om = omega.reshape(-1, N)
    _, _, logzN = _z_recursion(om, beta, h, law, N)
    logZ = logzN - math.log(mass.u[N])
    if batch:
        return logZ
    return PartitionEstimate(float(logZ[0]), Mode.COND_PLAIN, Provenance.RECURSION)


def wick_exponent(tau_set, beta, kernel):
    """``(beta^2 / 2) sum_{n,m in tau} gamma(n - m)``, diagonal plus twice the upper triangle."""
    t = np.asarray(sorted(tau_set), dtype=float)
    if t.size == 0:
        return 0.0
    diff = t[None, :] - t[:, None]
    iu = np.triu_indices(t.size, 1)
    s = t.size * kernel.gamma0 + 2.0 * float(np.sum(kernel(diff[iu])))
    return 0.5 * beta * beta * s


def wick_exponents(occ, beta, kernel):
    """Wick exponents of many paths given as an occupation matrix."""
    S = np.asarray(occ, dtype=float)
    return 0.5 * beta * beta * toeplitz_quadratic(kernel, S)


def sample_paths(law, N, M, rng, conditioned=False, mass=None, chunk=4096):
    """Occupation matrix (M, N) of free or pinned paths."""
    out = np.empty((M, N), dtype=bool)
    if conditioned and mass is None:
        mass = renewal_mass(law, N)
    for s in range(0, M, chunk):
        m = min(chunk, M - s)
        if conditioned:
            out[s:s + m] = pinned_occupancy(law, mass, N, rng.random((m, N)))
        else:
            out[s:s + m] = free_occupancy(law, N, rng.random((m, N + 1)))
    return out


def _path_logweights(omega, occ, beta, h, kernel, wick=True):
    S = occ.astype(float)
    lw = beta * (np.atleast_2d(omega) @ S.T) + h * S.sum(axis=1)
    if wick:
        lw = lw - wick_exponents(S, beta, kernel)
    return lw


def mc_wick_partition(omega, scalings, law, kernel, N, M, rng, conditioned=False, mass=None):
    """Monte Carlo Wick-ordered partition function for a fixed environment.

    Averages ``exp{sum_{n in tau} (beta_N omega_n + h_N) - wick_exponent(tau)}``
    over ``M`` free (or pinned) renewal paths.
    """
    if M < 2:
        raise DomainError("Monte Carlo needs M >= 2")
    omega = _check_omega(omega, N)
    occ = sample_paths(law, N, M, rng, conditioned, mass)
    lw = _path_logweights(omega, occ, scalings.beta_N, scalings.h_N, kernel)[0]
    mode = Mode.COND_WICK if conditioned else Mode.FREE_WICK
    mx = float(lw.max())
    w = np.exp(lw - mx)
    mean = float(w.mean()) * math.exp(mx)
    se = batched_se(w) * math.exp(mx)
    return PartitionEstimate(math.log(mean), mode, Provenance.MONTE_CARLO, mean, se, M)


def wick_partition_pool(omegas, occ, beta, h, kernel, wick=True, chunk=2048):
    """Log of the path-pool average for each environment row.

    Every environment is averaged over the same pool of paths, so for each
    fixed path the environment average of its Wick weight is exactly one.
    """
    omegas = np.ascontiguousarray(np.atleast_2d(omegas), dtype=float)
    S = occ.astype(float)
    base = h * S.sum(axis=1)
    if wick:
        base = base - wick_exponents(S, beta, kernel)
    out = np.empty(omegas.shape[0])
    for s in range(0, omegas.shape[0], chunk):
        lw = beta * (omegas[s:s + chunk] @ S.T) + base
        out[s:s + chunk] = mean_of_exp(lw)
    return out


# ---------------------------------------------------------------------------
# enumeration oracles


def _subset_table(N):
    masks = np.arange(1 << N, dtype=np.int64)
    return ((masks[:, None] >> np.arange(N)) & 1).astype(bool)


def _subset_logprob(bits, law, N, conditioned):
    """``log P(tau cap [1,N] = A)`` (free) or ``log P(A, N in tau)`` per row."""
    last = np.zeros(bits.shape[0], dtype=np.int64)
    with np.errstate(divide="ignore"):
        logq = np.log(law.q[: N + 1])
        logS = np.log(law.survival[: N + 1])
    lp = np.zeros(bits.shape[0])
    for n in range(1, N + 1):
        b = bits[:, n - 1]
        lp[b] += logq[n - last[b]]
        last[b] = n
    if conditioned:
        lp[last != N] = -np.inf
    else:
        lp += logS[N - last]
    return lp


def _gamma_matrix(kernel, N):
    i = np.arange(N)
    return kernel(i[:, None] - i[None, :])


def enumerate_partition(omega, beta, h, law, kernel, N, mode, mass=None):
    """Brute-force sum over all subsets of ``[1, N]``."""
    N = int(N)
    if N > ENUM_CAP:
        raise DomainError(f"enumeration limited to N <= {ENUM_CAP}")
    mode = Mode.parse(mode)
    omega = _check_omega(omega, N)
    bits = _subset_table(N)
    lp = _subset_logprob(bits, law, N, mode.conditioned)
    S = bits.astype(float)
    lw = lp + S @ (beta * omega + h)
    if mode.wick:
        G = _gamma_matrix(kernel, N)
        lw -= 0.5 * beta * beta * np.einsum("ij,jk,ik->i", S, G, S)
    logZ = float(logsumexp(lw))
    if mode.conditioned:
        if mass is None:
            mass = renewal_mass(law, N)
        logZ -= math.log(mass.u[N])
    return PartitionEstimate(logZ, mode, Provenance.ENUMERATION)


def replica_second_moment_wick(law, kernel, scalings, N, method="enumeration", M=10 ** 5,
                               rng=None, conditioned=False, chunk=4096):
    """``E[tilde Z_N^2]`` through two independent replicas ``tau``, ``tau'``.

    ``E exp{h_N (|tau| + |tau'|) + beta_N^2 sum_{n,m} gamma(n-m) 1_{n in tau} 1_{m in tau'}}``
    by exact double enumeration (``N <= 11``) or Monte Carlo over pairs.
    Returns ``(value, se)``; ``se`` is zero for enumeration.
    """
    N = int(N)
    b, h = scalings.beta_N, scalings.h_N
    if method == "enumeration":
        if N > REPLICA_ENUM_CAP:
            raise DomainError(f"replica enumeration limited to N <= {REPLICA_ENUM_CAP}")
        bits = _subset_table(N)
        lp = _subset_logprob(bits, law, N, conditioned)
        if conditioned:
            lp -= math.log(renewal_mass(law, N).u[N])
        S = bits.astype(float)
        X = (b * b) * (S @ _gamma_matrix(kernel, N) @ S.T)
        X += h * (S.sum(1)[:, None] + S.sum(1)[None, :])
        E = logsumexp(X + lp[:, None] + lp[None, :])
        return float(math.exp(E)), 0.0
    if method != "mc":
        raise DomainError("method must be 'enumeration' or 'mc'")
    if M < 2 or rng is None:
        raise DomainError("Monte Carlo needs M >= 2 and an explicit generator")
    mass = renewal_mass(law, N) if conditioned else None
    vals = np.empty(M)
    for s in range(0, M, chunk):
        m = min(chunk, M - s)
        A = sample_paths(law, N, m, rng, conditioned, mass).astype(float)
        B = sample_paths(law, N, m, rng, conditioned, mass).astype(float)
        x = (b * b) * np.sum(toeplitz_matvec(kernel, A) * B, axis=1)
        x += h * (A.sum(1) + B.sum(1))
        vals[s:s + m] = np.exp(x)
    return float(vals.mean()), batched_se(vals)


def sup_bound_diagnostics(law, kernel, scalings, N, mass=None):
    """Exact ``beta_N^2 E[sum gamma(n-m) 1_{n,m in tau}]`` and ``E exp(h_N |tau|)``.

    The first uses ``P(n, m in tau) = u(n) u(m-n)``; with
    ``G(j) = sum_{d<=j} gamma(d) u(d)`` it equals
    ``beta_N^2 [gamma(0) sum u(n) + 2 sum u(n) G(N-n)]``.
    """
    N = int(N)
    if mass is None or mass.N < N:
        mass = renewal_mass(law, N)
    u = mass.u[: N + 1]
    d = np.arange(1, N + 1)
    G = np.concatenate([[0.0], np.cumsum(kernel(d) * u[1:])])
    n = np.arange(1, N + 1)
    a = scalings.beta_N ** 2 * (kernel.gamma0 * u[1:].sum() + 2.0 * np.dot(u[1:], G[N - n]))
    bval = exact_partition_free(np.zeros(N), 0.0, scalings.h_N, law, N).value
    return float(a), float(bval)
