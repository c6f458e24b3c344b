"""
Second moment of the continuum limit
====================================

The Skorohod chaos series with calibrated tail bound, next to the finite
N replica second moment.
"""

import pinchaos as pc

alpha, H = 0.75, 0.8
rk = pc.RegimeKernel.sub_unit(alpha)

# the tail constant C is calibrated on low orders, then R is chosen from the budget
res = pc.second_moment_skorohod(0.5, 0.0, rk, H, mc_spec=pc.MCSpec(20000), seed=5)
print("series", res.value, "+-", res.se, "tail", res.tail_bound, "R", res.R, "C", res.C)

# finite N replica moments approach the limit slowly
law = pc.build_gap_law(alpha, n_max=2 ** 12)
kernel = pc.kernel_gamma("fgn", H)
for N in (8, 10):
    sc = pc.make_scalings(law, kernel, N, 0.5, 0.0)
    print(N, pc.replica_second_moment_wick(law, kernel, sc, N)[0])

# the Stratonovich bound needs alpha + H > 3/2
strat = pc.second_moment_stratonovich(0.5, 0.0, rk, H, R=2, mc_spec=pc.MCSpec(20000))
print("stratonovich bound", strat.value + strat.tail_bound)
