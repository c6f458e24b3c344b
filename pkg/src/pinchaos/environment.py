"""Stationary Gaussian environments with long-range power-law correlations."""

from __future__ import annotations

import enum
import functools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, toeplitz

from ._rng import stream
from .errors import DomainError, EmbeddingNotPSD

__all__ = [
    "KernelKind",
    "Method",
    "CorrelationKernel",
    "EnvironmentSample",
    "kernel_gamma",
    "gamma_scaled",
    "sample_environment",
    "sample_environment_batch",
    "aggregate_fgn",
    "embedding_spectrum",
    "save_environment_csv",
]

NEG_TOL = -1e-10
CHOLESKY_CAP = 4096


class KernelKind(str, enum.Enum):
    FGN = "FgnNormalized"
    TRUNCPOW = "TruncatedPower"

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        t = str(text).strip().lower()
        if t in ("fgn", "fgnnormalized"):
            return cls.FGN
        if t in ("truncpow", "truncatedpower"):
            return cls.TRUNCPOW
        raise DomainError(f"unknown kernel kind {text!r}")


class Method(str, enum.Enum):
    CIRCULANT = "CirculantEmbedding"
    CHOLESKY = "Cholesky"


@dataclass(frozen=True)
class CorrelationKernel:
    """Covariance ``gamma(n)`` of the environment.

    ``FgnNormalized`` is the fractional Gaussian noise covariance divided by
    ``H(2H-1)``, so that ``gamma(n) n^(2-2H) -> 1``. ``TruncatedPower`` is
    ``min(1, |n|^(2H-2))``; it need not be positive semidefinite and is
    checked when sampling.
    """

    H: float
    kind: KernelKind = KernelKind.FGN

    def __post_init__(self):
        if not 0.5 < self.H < 1:
            raise DomainError(
                f"Hurst parameter must lie in (1/2, 1), got H={self.H}"
            )
        object.__setattr__(self, "kind", KernelKind(self.kind))

    def __call__(self, n):
        n = np.abs(np.asarray(n, dtype=float))
        H2 = 2.0 * self.H
        if self.kind is KernelKind.FGN:
            val = (np.abs(n + 1) ** H2 - 2 * n ** H2 + np.abs(n - 1) ** H2) / (H2 * (H2 - 1))
            # the second difference cancels badly far out; switch to the series
            far = n > 1e4
            if np.any(far):
                nf = np.where(far, n, 1e4)
                x = nf ** -2.0
                c1 = (H2 - 2) * (H2 - 3) / 12.0
                c2 = (H2 - 2) * (H2 - 3) * (H2 - 4) * (H2 - 5) / 360.0
                series = nf ** (H2 - 2) * (1 + c1 * x + c2 * x * x)
                val = np.where(far, series, val)
            return val
        with np.errstate(divide="ignore"):
            return np.where(n == 0, 1.0, np.minimum(1.0, n ** (H2 - 2)))

    @property
    def gamma0(self):
        return float(self(0))

    @functools.cached_property
    def dominating_constant(self):
        """Smallest ``C`` with ``gamma(n) <= C min(1, |n|^(2H-2))`` on a wide grid."""
        n = np.unique(np.concatenate([np.arange(0, 1000), np.geomspace(1000, 1e8, 200).round()]))
        env = np.minimum(1.0, np.where(n == 0, 1.0, n) ** (2 * self.H - 2))
        return float(np.max(self(n) / env))

    def label(self):
        return "fgn" if self.kind is KernelKind.FGN else "truncpow"


def kernel_gamma(kind, H):
    """Kernel object, callable on integer lags."""
    return CorrelationKernel(float(H), KernelKind.parse(kind) if isinstance(kind, str) else kind)


def gamma_scaled(kernel, N):
    """``t -> N^(2-2H) gamma(floor(|t| N))``."""
    scale = float(N) ** (2 - 2 * kernel.H)

    def g(t):
        return scale * kernel(np.floor(np.abs(np.asarray(t, dtype=float)) * N))

    return g


@dataclass(frozen=True, eq=False)
class EnvironmentSample:
    omega: np.ndarray = field(repr=False)
    kernel: CorrelationKernel
    method: Method
    seed: object
    min_embedding_eigenvalue: float

    @property
    def N(self):
        return self.omega.shape[-1]


@functools.lru_cache(maxsize=64)
def embedding_spectrum(kernel, N):
    """Eigenvalues of the circulant extension of the covariance row.

    Returns ``(lam, min_eigenvalue)`` where ``lam`` has tiny negatives
    clipped to zero.
    """
    M = 1 << max(1, (2 * N - 1).bit_length())
    j = np.arange(M)
    row = kernel(np.minimum(j, M - j))
    lam = np.fft.fft(row).real
    lmin = float(lam.min())
    lam = np.where(lam < 0, 0.0, lam)
    lam.setflags(write=False)
    return lam, lmin


@functools.lru_cache(maxsize=16)
def _cholesky_factor(kernel, N):
    C = toeplitz(kernel(np.arange(N)))
    try:
        Lc = cholesky(C, lower=True)
    except np.linalg.LinAlgError as exc:
        raise EmbeddingNotPSD(float(np.linalg.eigvalsh(C).min()), N) from exc
    Lc.setflags(write=False)
    return Lc


def _choose_method(kernel, N, method):
    lam, lmin = embedding_spectrum(kernel, N)
    if method == "cholesky":
        return Method.CHOLESKY, lmin
    if lmin < NEG_TOL:
        if method == "circulant" or N > CHOLESKY_CAP:
            raise EmbeddingNotPSD(lmin, N)
        return Method.CHOLESKY, lmin
    return Method.CIRCULANT, lmin


def _circulant_draw(lam, N, z):
    """Real parts of ``fft(sqrt(lam/M) (z1 + i z2))``; ``z`` has shape (..., 2, M)."""
    M = lam.shape[0]
    w = np.fft.fft(np.sqrt(lam / M) * (z[..., 0, :] + 1j * z[..., 1, :]), axis=-1)
    return np.ascontiguousarray(w.real[..., :N])


def sample_environment(kernel, N, rng, method="auto", seed=None):
    """Draw one environment ``omega_1..omega_N``.

    Circulant embedding is used by default; a materially negative embedding
    eigenvalue (below ``-1e-10``) switches to an exact Cholesky factor when
    ``N <= 4096`` and raises :class:`EmbeddingNotPSD` otherwise.
    """
    N = int(N)
    if N < 1:
        raise DomainError("environment length must be at least 1")
    meth, lmin = _choose_method(kernel, N, method)
    if meth is Method.CHOLESKY:
        omega = _cholesky_factor(kernel, N) @ rng.standard_normal(N)
    else:
        lam, _ = embedding_spectrum(kernel, N)
        omega = _circulant_draw(lam, N, rng.standard_normal((2, lam.shape[0])))
    return EnvironmentSample(omega, kernel, meth, seed, lmin)


def sample_environment_batch(kernel, N, reps, seed, tag="env", method="auto", start=0):
    """``reps`` environments, replicate ``r`` drawn from its own stream.

    Row ``r`` depends only on ``(seed, tag, start + r)``, so batches can be
    split or reordered without changing any replicate.
    """
    N = int(N)
    meth, lmin = _choose_method(kernel, N, method)
    if meth is Method.CHOLESKY:
        Z = np.stack([stream(seed, tag, start + r).standard_normal(N) for r in range(reps)])
        omega = Z @ _cholesky_factor(kernel, N).T
    else:
        lam, _ = embedding_spectrum(kernel, N)
        M = lam.shape[0]
        Z = np.stack([stream(seed, tag, start + r).standard_normal((2, M)) for r in range(reps)])
        omega = _circulant_draw(lam, N, Z)
    return EnvironmentSample(omega, kernel, meth, seed, lmin)


def aggregate_fgn(omega, H):
    """Pairwise aggregation ``2^-H (omega_{2n-1} + omega_{2n})``.

    For the normalized fGn kernel at length ``2N`` this is exactly a
    normalized fGn vector of length ``N``, by self-similarity of fractional
    Brownian motion. Used to couple environments along a dyadic ladder.
    """
    omega = np.asarray(omega)
    n2 = omega.shape[-1] // 2
    o = omega[..., : 2 * n2]
    return 2.0 ** (-H) * (o[..., 0::2] + o[..., 1::2])


def save_environment_csv(sample, path, extra=None):
    """Write ``rep,n,omega`` rows plus a JSON sidecar ``path + '.json'``."""
    omega = np.atleast_2d(sample.omega)
    with open(path, "w", newline="") as fh:
        fh.write("rep,n,omega\n")
        for r, row in enumerate(omega):
            for n, v in enumerate(row, start=1):
                fh.write(f"{r},{n},{v:.17g}\n")
    meta = {
        "kernel": sample.kernel.kind.value,
        "H": sample.kernel.H,
        "N": int(omega.shape[1]),
        "reps": int(omega.shape[0]),
        "method": sample.method.value,
        "seed": sample.seed,
        "min_embedding_eigenvalue": sample.min_embedding_eigenvalue,
    }
    if extra:
        meta.update(extra)
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return meta
