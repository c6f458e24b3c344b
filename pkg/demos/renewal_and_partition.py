"""
Heavy-tailed renewals and the pinning partition function
=========================================================

A gap law with tail exponent alpha, its renewal mass, and the partition
function for one environment computed three ways.
"""

import numpy as np

import pinchaos as pc

# gap law q(n) ~ L / n^(1 + alpha); the normaliser is exact up to the tail estimate
law = pc.build_gap_law(0.5, n_max=2 ** 14)
print("normaliser", law.norm_c, "regime", law.regime.value)

# renewal mass u(n) = P(n in tau); the renewal theorem predicts u(n) n^(1-alpha) L(n) -> C_alpha
mass = pc.renewal_mass(law, 4096)
for n in (16, 256, 4096):
    print(n, mass.u[n] * n ** 0.5 * law.L(n) / law.C_alpha)

# one fGn environment and the intermediate disorder scalings
kernel = pc.kernel_gamma("fgn", 0.8)
N = 14
omega = pc.sample_environment(kernel, N, np.random.default_rng(0)).omega
sc = pc.make_scalings(law, kernel, N, beta_hat=1.0, h_hat=0.5)

# exact recursion, brute force enumeration and Monte Carlo over renewal paths
exact = pc.exact_partition_free(omega, sc.beta_N, sc.h_N, law, N)
enum = pc.enumerate_partition(omega, sc.beta_N, sc.h_N, law, kernel, N, "free,plain")
print("recursion", exact.value, "enumeration", enum.value)

# the Wick-ordered version subtracts the pair interaction of the environment
wick = pc.enumerate_partition(omega, sc.beta_N, sc.h_N, law, kernel, N, "free,wick")
mc = pc.mc_wick_partition(omega, sc, law, kernel, N, 20000, np.random.default_rng(1))
print("wick exact", wick.value, "monte carlo", mc.mean, "+-", mc.standard_error)
