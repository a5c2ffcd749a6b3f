"""How many people does a covariate-dependent experiment need?

The bundled allocation tables hold stratum counts for a two-rule design over
two income cells. For each table we compute the worst-case regret bound of the
covariate-dependent rule and find the first N where it drops below the gain
available from conditioning on income at all.
"""

from regret_design import (
    RuleGrid,
    coarsen_grid,
    lg_gap,
    load_fixture,
    noise_precision,
    sufficient_sample_size,
    uniform_regret_cmes,
)


def gain_from_conditioning(grid: RuleGrid) -> float:
    # pool both cells into one and measure the worst-case welfare lost
    z_map = (0, 0)
    return lg_gap(grid, coarsen_grid(grid, z_map), z_map)


for name in ("p050", "p010", "p090", "p099"):
    table = load_fixture(name)
    grid = table.grid
    gain = gain_from_conditioning(grid)
    print(f"P(low) = {grid.profile.probs[0]:.2f}; rules {grid.vectors}")
    for row in table.rows[:4]:
        b = uniform_regret_cmes(noise_precision(row.counts, grid), grid.profile)
        print(f"  N={row.n:>5}: regret bound {b:.5f}")
    threshold = table.rows[0].stored_lower or gain
    res = sufficient_sample_size(threshold, table.policy(), grid)
    print(f"  gain from conditioning {gain:.5f}; stored threshold {threshold}; sufficient N = {res.n}\n")
