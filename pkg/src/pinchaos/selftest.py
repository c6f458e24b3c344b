"""Invariant suite behind ``pinchaos selftest``.

``quick`` runs the exact, closed-form checks only; the full suite adds
oracle comparisons at small sizes and validates a table cache.
"""

from __future__ import annotations

import math

import numpy as np

from ._rng import stream
from .chaos import RegimeKernel, dirichlet_moment, hu_meyer_coefficient, phi_k
from .environment import CorrelationKernel, sample_environment_batch
from .io import TableCache
from .lab import ks_two_sample
from .partition import (
    Mode,
    enumerate_partition,
    exact_partition_conditioned,
    exact_partition_free,
    wick_exponent,
)
from .renewal import build_gap_law, renewal_mass
from .wick import hermite, wick_product


def _quick():
    law = build_gap_law(0.75, n_max=2 ** 12)
    u = renewal_mass(law, 4).u
    k = CorrelationKernel(0.75)
    q = law.q
    om = np.array([0.3])
    z1 = exact_partition_free(om, 0.7, 0.1, law, 1).value
    checks = {
        "gap_law_normalized": abs(q[1:].sum() + law.tail_mass - 1) < 1e-12,
        "survival_start": law.survival[0] == 1.0,
        "q1_formula": math.isclose(q[1], law.norm_c, rel_tol=1e-15),
        "mass_base_cases": u[0] == 1.0 and math.isclose(u[1], q[1]) and math.isclose(u[2], q[2] + q[1] ** 2),
        "fgn_gamma0": math.isclose(k.gamma0, 8 / 3, rel_tol=1e-14),
        "kernel_symmetry": k(5) == k(-5),
        "partition_unit_at_zero": abs(exact_partition_free(np.zeros(16), 0, 0, law, 16).value - 1) < 1e-13,
        "partition_N1": math.isclose(z1, math.exp(0.7 * 0.3 + 0.1) * q[1] + law.survival[1], rel_tol=1e-13),
        "wick_exponent_pair": math.isclose(wick_exponent([1, 2], 1.0, k), 0.5 * (2 * k(0) + 2 * k(1))),
        "hermite_3": hermite(3, 2.0) == 2.0,
        "wick_square": math.isclose(wick_product([1.5, 1.5], [[2.0, 2.0], [2.0, 2.0]]), 1.5 ** 2 - 2.0),
        "hu_meyer": (hu_meyer_coefficient(2, 1), hu_meyer_coefficient(3, 1), hu_meyer_coefficient(4, 2)) == (1, 3, 3),
        "dirichlet_pi": math.isclose(dirichlet_moment([-0.5, -0.5], 1.0), math.pi, rel_tol=1e-14),
        "phi_empty": phi_k(np.empty(0), RegimeKernel.sub_unit(0.75)) == 1.0,
        "ks_identical": ks_two_sample(np.arange(60.0), np.arange(60.0))[0] == 0.0,
    }
    return checks


def _full(cache_dir=None):
    checks = {}
    law = build_gap_law(0.75, n_max=2 ** 12)
    k = CorrelationKernel(0.8)
    N = 10
    mass = renewal_mass(law, N)
    rng = stream(0, "selftest")
    worst = 0.0
    for _ in range(5):
        om = rng.standard_normal(N)
        for mode, exact in ((Mode.FREE_PLAIN, exact_partition_free(om, 0.5, 0.1, law, N)),
                            (Mode.COND_PLAIN, exact_partition_conditioned(om, 0.5, 0.1, law, mass, N))):
            e = enumerate_partition(om, 0.5, 0.1, law, k, N, mode, mass)
            worst = max(worst, abs(math.expm1(exact.log_value - e.log_value)))
    checks["recursion_matches_enumeration"] = worst < 1e-10
    u = renewal_mass(law, 2000).u
    S = law.survival
    ident = max(abs(np.dot(u[: n + 1], S[n::-1]) - 1) for n in (10, 500, 2000))
    checks["renewal_identity"] = ident < 1e-10
    env = sample_environment_batch(k, 64, 3, 7).omega
    checks["environment_deterministic"] = np.array_equal(env, sample_environment_batch(k, 64, 3, 7).omega)
    if cache_dir:
        cache = TableCache(cache_dir)
        cache.law(0.75, law.sv, 2 ** 12)
        cache.kernel_table(k, 1024)
        for name, ok in cache.validate().items():
            checks[f"cache:{name}"] = ok
    return checks


def run_selftest(quick=False, cache_dir=None):
    """Return ``{check name: passed}``."""
    out = {k: bool(v) for k, v in _quick().items()}
    if not quick:
        out.update({k: bool(v) for k, v in _full(cache_dir).items()})
    return out
