"""Simulated welfare of the empirical-success rule against its bounds.

We draw Bernoulli outcomes for a two-arm experiment many times, compare the
average welfare of the chosen fraction with the theoretical sandwich, and then
look at how regret shrinks as the sample grows along a local family of states.
"""

from regret_design import RuleGrid, StateOfNature, StratumCounts, exact_expected_welfare, scaled_regret_curve
from regret_design.montecarlo import SimulationConfig, verify_bounds

grid = RuleGrid.from_ratios((0.0, 1.0))
state = StateOfNature((0.0, 1.0), [[0.45, 0.5], [0.5, 0.52]])

for n in (10, 50, 250):
    counts = StratumCounts([[[n], [0]], [[0], [n]]])
    cfg = SimulationConfig(state, grid, counts, replications=20_000, seed=n)
    chk = verify_bounds(cfg)
    line = (f"n per arm {n:>3}: welfare {chk.welfare:.4f} (se {chk.welfare_se:.4f}) "
            f"within [{chk.welfare_lower:.4f}, {chk.welfare_upper:.4f}]: {chk.sandwich_ok}")
    if 2 * n <= 40:
        line += f"; exact {exact_expected_welfare(cfg, 'mes'):.4f}"
    print(line)

print("\nscaled regret along means 0.5 vs 0.5 + 1/sqrt(n):")
for row in scaled_regret_curve(grid, [100, 400, 1600], b=1.0, replications=20_000):
    print(f"  n={row.n:>5}: regret {row.regret:.5f}, sqrt(n)*regret {row.scaled_regret:.4f}")
