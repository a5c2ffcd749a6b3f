"""Choosing how many clusters receive each saturation.

With K candidate fractions and a fixed budget N, the shares alpha_k trade off
how precisely each arm's welfare is estimated. The optimizer below minimizes
the worst-case regret bound; a brute-force lattice scan is shown alongside.
"""

import itertools

import numpy as np

from regret_design import optimize_saturation, saturation_objective, saturation_precision, uniform_regret_mes

N = 300
for ratios in [(0.0, 1.0), (0.1, 0.5, 0.9), (0.0, 0.25, 0.5, 0.75)]:
    d = optimize_saturation(ratios, N)
    print(f"fractions {ratios}: shares {np.round(d.alphas, 5)} objective {d.objective:.6f}")
    print(f"  uniform regret bound at these shares: {uniform_regret_mes(saturation_precision(d.alphas, N)):.5f}")

# a coarse scan for K=3 lands close to, but never below, the solver
best = min(
    (saturation_objective((a / 100, b / 100, 1 - (a + b) / 100), N), (a, b))
    for a, b in itertools.product(range(1, 99), repeat=2)
    if a + b < 100 and a <= b and a <= 100 - a - b
)
print(f"\n1% lattice best for K=3: {best[0]:.6f} at shares {best[1]}")
