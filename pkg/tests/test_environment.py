"""Correlated Gaussian environments."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import toeplitz

from pinchaos import (
    DomainError,
    EmbeddingNotPSD,
    KernelKind,
    Method,
    aggregate_fgn,
    embedding_spectrum,
    gamma_scaled,
    kernel_gamma,
    ks_two_sample,
    sample_environment,
    sample_environment_batch,
    save_environment_csv,
)


def test_fgn_variance_and_decay():
    k = kernel_gamma("fgn", 0.75)
    assert k.gamma0 == pytest.approx(8.0 / 3.0, rel=1e-15)
    n = np.array([1e3, 1e5, 1e7])
    np.testing.assert_allclose(k(n) * n ** (2 - 1.5), 1.0, rtol=1e-6)


def test_fgn_far_series_continuous():
    k = kernel_gamma("fgn", 0.8)
    lo, hi = k(np.array([1e4, 1e4 + 1e-6]))
    assert hi == pytest.approx(lo, rel=1e-8)


def test_truncated_power_values():
    k = kernel_gamma("truncpow", 0.7)
    np.testing.assert_allclose(k(np.array([0, 1, 4])), [1.0, 1.0, 4 ** -0.6])


def test_hurst_domain():
    for H in (0.5, 1.0, 1.2):
        with pytest.raises(DomainError, match="Hurst"):
            kernel_gamma("fgn", H)
    with pytest.raises(DomainError):
        KernelKind.parse("matern")


def test_gamma_scaled():
    H = 0.75
    k = kernel_gamma("fgn", H)
    N = 2 ** 14
    g = gamma_scaled(k, N)
    assert g(1.0 / N) == pytest.approx(N ** (2 - 2 * H) * k(1), rel=1e-14)
    assert g(0.5) == pytest.approx(0.5 ** (2 * H - 2), rel=0.01)


def test_dominating_constant():
    for kind in ("fgn", "truncpow"):
        k = kernel_gamma(kind, 0.7)
        n = np.arange(1, 5000)
        assert np.all(k(n) <= k.dominating_constant * np.minimum(1, n ** -0.6) * (1 + 1e-12))


def test_fgn_embedding_is_psd():
    for H in (0.55, 0.75, 0.95):
        _, lmin = embedding_spectrum(kernel_gamma("fgn", H), 1024)
        assert lmin > -1e-10


def test_truncated_power_not_psd():
    k = kernel_gamma("truncpow", 0.7)
    with pytest.raises(EmbeddingNotPSD):
        sample_environment(k, 8, np.random.default_rng(0))
    with pytest.raises(EmbeddingNotPSD):
        sample_environment(k, 8192, np.random.default_rng(0))
    C = toeplitz(k(np.arange(3)))
    assert np.linalg.eigvalsh(C).min() < 0


def test_determinism():
    k = kernel_gamma("fgn", 0.8)
    a = sample_environment_batch(k, 100, 5, seed=11)
    b = sample_environment_batch(k, 100, 5, seed=11)
    np.testing.assert_array_equal(a.omega, b.omega)
    # replicates depend only on their own index
    c = sample_environment_batch(k, 100, 3, seed=11, start=2)
    np.testing.assert_array_equal(a.omega[2:], c.omega)
    assert a.method is Method.CIRCULANT


def test_single_site_variance():
    k = kernel_gamma("fgn", 0.75)
    x = sample_environment_batch(k, 1, 20000, seed=1).omega[:, 0]
    assert np.var(x) == pytest.approx(k.gamma0, rel=0.05)


def test_circulant_agrees_with_cholesky():
    k = kernel_gamma("fgn", 0.75)
    rng_a, rng_b = np.random.default_rng(1), np.random.default_rng(2)
    circ = np.stack([sample_environment(k, 32, rng_a).omega for _ in range(2000)])
    chol = np.stack([sample_environment(k, 32, rng_b, method="cholesky").omega for _ in range(2000)])
    stat_a = circ[:, 0] * circ[:, 5]
    stat_b = chol[:, 0] * chol[:, 5]
    assert ks_two_sample(stat_a, stat_b)[1] > 0.01
    assert ks_two_sample(circ.sum(1), chol.sum(1))[1] > 0.01


def test_empirical_covariance():
    k = kernel_gamma("fgn", 0.8)
    w = sample_environment_batch(k, 16, 20000, seed=3).omega
    emp = np.cov(w, rowvar=False)
    np.testing.assert_allclose(emp, toeplitz(k(np.arange(16))), atol=0.15)


def test_aggregation_is_exact_covariance_map():
    H, N = 0.7, 64
    k = kernel_gamma("fgn", H)
    big = toeplitz(k(np.arange(2 * N)))
    A = aggregate_fgn(np.eye(2 * N), H).T
    np.testing.assert_allclose(A @ big @ A.T, toeplitz(k(np.arange(N))), atol=1e-12)


def test_csv_export(tmp_path):
    k = kernel_gamma("fgn", 0.75)
    s = sample_environment_batch(k, 4, 2, seed=0)
    path = tmp_path / "env.csv"
    save_environment_csv(s, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "rep,n,omega" and len(lines) == 9
    assert float(lines[1].split(",")[2]) == s.omega[0, 0]
    meta = json.loads((tmp_path / "env.csv.json").read_text())
    assert meta["H"] == 0.75 and meta["method"] == "CirculantEmbedding"


@settings(max_examples=15, deadline=None)
@given(st.floats(0.51, 0.99), st.integers(2, 300))
def test_fgn_kernel_properties(H, N):
    k = kernel_gamma("fgn", H)
    n = np.arange(1, N)
    g = k(n)
    assert np.all(g > 0) and np.all(np.diff(g) <= 1e-12)
    assert embedding_spectrum(k, N)[1] > -1e-10
