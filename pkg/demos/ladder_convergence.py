"""
Convergence along a dyadic ladder
=================================

Samples of the Wick-ordered partition function on coupled environments,
consecutive KS distances and the mean-one check.
"""

import pinchaos as pc

# a small run; the acceptance run uses 10000 replicates and a larger path pool
cfg = pc.ExperimentConfig(alpha=0.75, H=0.8, beta_hat=1.0, ladder=(64, 128, 256),
                          reps=2000, tau_paths=2048)
report = pc.cauchy_convergence_study(cfg)

for row in report.moments:
    print(f"N={row['N']:5d}  mean={row['mean']:.4f} +- {row['mean_se']:.4f}  "
          f"E[Z^2]={row['second_moment']:.4f} +- {row['second_moment_se']:.4f}")
for row in report.ks:
    print(f"KS {row['N1']} vs {row['N2']}: D={row['D']:.4f}  p={row['p_value']:.3f}")
print(report.flags)
