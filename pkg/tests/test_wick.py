"""Wick products, cell averages and discrete U-statistics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pinchaos import (
    DomainError,
    GridFunction,
    RegimeKernel,
    grid_average,
    hermite,
    hnorm2_box,
    hnorm2_boxes,
    hnorm2_phi1_exact,
    isserlis,
    kernel_gamma,
    product_from_wick,
    sample_environment_batch,
    toeplitz_matvec,
    u_statistic,
    u_statistic_variance,
    wick_pairing_expectation,
    wick_product,
)
from pinchaos.wick import QuadSpec


def _random_cov(rng, m):
    A = rng.standard_normal((m, m))
    return A @ A.T / m + 0.1 * np.eye(m)


def test_hermite_values():
    x = np.array([-1.5, 0.0, 2.0])
    np.testing.assert_allclose(hermite(2, x), x ** 2 - 1)
    np.testing.assert_allclose(hermite(4, x), x ** 4 - 6 * x ** 2 + 3)
    assert hermite(0, 3.0) == 1.0
    with pytest.raises(DomainError):
        hermite(-1, 0.0)


def test_wick_small_orders():
    C = np.array([[2.0, 0.5], [0.5, 1.0]])
    x = np.array([0.3, -1.2])
    assert wick_product(x[:1], C[:1, :1]) == pytest.approx(0.3)
    assert wick_product(x, C) == pytest.approx(0.3 * -1.2 - 0.5)
    same = np.array([[2.0, 2.0], [2.0, 2.0]])
    assert wick_product(np.array([0.7, 0.7]), same) == pytest.approx(0.49 - 2.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 7), st.floats(-3, 3), st.floats(0.2, 4))
def test_wick_power_is_scaled_hermite(m, x, c):
    val = wick_product(np.full(m, x), np.full((m, m), c))
    assert val == pytest.approx(c ** (m / 2) * hermite(m, x / math.sqrt(c)), rel=1e-9, abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10 ** 6))
def test_wick_symmetric_and_inverts(m, seed):
    rng = np.random.default_rng(seed)
    C = _random_cov(rng, m)
    x = rng.standard_normal(m)
    p = rng.permutation(m)
    assert wick_product(x[p], C[np.ix_(p, p)]) == pytest.approx(wick_product(x, C), rel=1e-9, abs=1e-9)
    assert product_from_wick(x, C) == pytest.approx(np.prod(x), rel=1e-9, abs=1e-9)


def test_wick_mean_zero_and_isserlis():
    rng = np.random.default_rng(0)
    m = 4
    C = _random_cov(rng, m)
    X = rng.multivariate_normal(np.zeros(m), C, size=200000)
    w = wick_product(X, C)
    assert abs(w.mean()) < 4 * w.std() / math.sqrt(len(w))
    prod = np.prod(X, axis=1)
    assert abs(prod.mean() - isserlis(C)) < 4 * prod.std() / math.sqrt(len(prod))
    assert isserlis(C[:3, :3]) == 0.0
    assert isserlis(C[:2, :2]) == pytest.approx(C[0, 1])


def test_pairing_expectation():
    k = kernel_gamma("fgn", 0.75)
    assert wick_pairing_expectation([1, 2], [3], k) == 0.0
    g = lambda n: float(k(n))
    expected = g(3 - 5) * g(4 - 6) + g(3 - 6) * g(4 - 5)
    assert wick_pairing_expectation([3, 4], [5, 6], k) == pytest.approx(expected)
    assert wick_pairing_expectation([5, 6], [3, 4], k) == pytest.approx(expected)
    assert wick_pairing_expectation([], [], k) == 1.0


def test_pairing_expectation_monte_carlo():
    k = kernel_gamma("fgn", 0.8)
    w = sample_environment_batch(k, 8, 100000, seed=4).omega
    Cf = k(np.arange(8)[:, None] - np.arange(8)[None, :])
    A, B = [0, 1], [4, 7]
    a = wick_product(w[:, A], Cf[np.ix_(A, A)])
    b = wick_product(w[:, B], Cf[np.ix_(B, B)])
    v = a * b
    assert abs(v.mean() - wick_pairing_expectation(A, B, k)) < 4 * v.std() / math.sqrt(len(v))


def test_grid_average_rules():
    one = lambda t: np.ones(len(t))
    assert grid_average(one, 8, 2, [3, 5])[0] == pytest.approx(1.0)
    lin = lambda t: t[:, 0] + 2 * t[:, 1]
    assert grid_average(lin, 4, 2, [1, 2])[0] == pytest.approx(0.125 + 2 * 0.375)
    with pytest.raises(DomainError):
        grid_average(one, 4, 2, [1])


def test_grid_average_singular_first_cell():
    a, N = 0.6, 32
    f = lambda t: t[:, 0] ** (a - 1)
    exact = N * (1.0 / N) ** a / a
    v, se = grid_average(f, N, 1, [1], QuadSpec(antiderivative=lambda x: x ** a / a))
    assert v == pytest.approx(exact, rel=1e-13) and se == 0.0
    qs = QuadSpec(mc_points=20000, rng=np.random.default_rng(1))
    v, se = grid_average(f, N, 1, [1], qs)
    assert se > 0 and abs(v - exact) < 4 * se


def test_indicator_cell_values():
    g = GridFunction.indicator(0.1, 0.5, 10)
    np.testing.assert_allclose(g.cell_values(), [0, 1, 1, 1, 1, 0, 0, 0, 0, 0], atol=1e-12)
    g = GridFunction.indicator(0.15, 0.5, 10)
    assert g.cell_values()[1] == pytest.approx(0.5)


def test_toeplitz_matvec():
    k = kernel_gamma("fgn", 0.7)
    v = np.random.default_rng(0).standard_normal(50)
    G = k(np.arange(50)[:, None] - np.arange(50)[None, :])
    np.testing.assert_allclose(toeplitz_matvec(k, v), G @ v, atol=1e-10)


def test_first_order_statistic_variance():
    H, N = 0.75, 256
    k = kernel_gamma("fgn", H)
    g = GridFunction.indicator(0.0, 1.0, N)
    assert u_statistic_variance(g, N, k) == pytest.approx(8.0 / 3.0, rel=1e-12)
    w = sample_environment_batch(k, N, 5000, seed=2).omega
    I1 = u_statistic(g, 1, N, w, k)
    assert np.var(I1) == pytest.approx(8.0 / 3.0, rel=0.06)


def test_tensor_square_identity():
    # I_2(g x g) = I_1(g)^2 - ||A_N g||^2
    H, N = 0.8, 64
    k = kernel_gamma("fgn", H)
    g = GridFunction.indicator(0.0, 0.5, N)
    w = sample_environment_batch(k, N, 50, seed=3).omega
    I1 = u_statistic(g, 1, N, w, k)
    I2 = u_statistic(GridFunction.tensor(g, g), 2, N, w, k)
    np.testing.assert_allclose(I2, I1 ** 2 - u_statistic_variance(g, N, k), atol=1e-10)


def test_dense_matches_tensor():
    H, N = 0.7, 32
    k = kernel_gamma("fgn", H)
    a = GridFunction.indicator(0.0, 0.3, N)
    b = GridFunction.indicator(0.5, 1.0, N)
    c = GridFunction.indicator(0.2, 0.9, N)
    w = sample_environment_batch(k, N, 20, seed=5).omega
    for fs in ((a, b), (a, b, c)):
        t = GridFunction.tensor(*fs)
        dense = GridFunction(m=len(fs), N=N, values=t.cell_values())
        np.testing.assert_allclose(u_statistic(dense, len(fs), N, w, k),
                                   u_statistic(t, len(fs), N, w, k), atol=1e-9)


def test_u_statistic_domain():
    k = kernel_gamma("fgn", 0.7)
    g = GridFunction.indicator(0, 1, 8)
    with pytest.raises(DomainError):
        u_statistic(g, 1, 16, np.zeros(16), k)


def test_box_norms():
    H = 0.75
    assert hnorm2_box(0, 1, H) == pytest.approx(8.0 / 3.0)
    # adjacent boxes: norm of the union splits into three pieces
    whole = hnorm2_box(0, 1, H)
    parts = hnorm2_box(0, 0.4, H) + hnorm2_box(0.4, 1, H) + 2 * hnorm2_boxes((0, 0.4), (0.4, 1), H)
    assert parts == pytest.approx(whole, rel=1e-12)
    with pytest.raises(DomainError):
        hnorm2_boxes((0, 0.5), (0.4, 1), H)


def test_grid_averaging_contracts_uniformly():
    # the norm of the discrete first-order statistic of t^(alpha-1) stays
    # within 0.2% of the continuum norm for every N on the ladder
    a, H = 0.75, 0.8
    k = kernel_gamma("fgn", H)
    rk = RegimeKernel.sub_unit(a)
    target = hnorm2_phi1_exact(rk, H) / rk.C_alpha ** 2
    qs = QuadSpec(antiderivative=lambda x: x ** a / a)
    ratios = []
    for N in (16, 64, 256, 1024):
        g = GridFunction.from_callable(lambda t: t[:, 0] ** (a - 1), N, quad_spec=qs)
        ratios.append(u_statistic_variance(g, N, k) / target)
    assert max(ratios) < 1.002 and min(ratios) > 0.99
    assert ratios[-1] == pytest.approx(1.0, abs=1e-4)
