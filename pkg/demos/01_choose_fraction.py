"""Picking a treatment fraction from experimental data.

Two villages were randomized to treat 30% and 50% of residents. We estimate
the welfare each fraction would deliver and pick the larger, then repeat the
exercise with fractions that differ by covariate cell.
"""

import numpy as np

from regret_design import ExperimentSample, PopulationProfile, RuleGrid, cmes_choose, mes_choose


def scalar_example():
    rng = np.random.default_rng(1)
    strata = {
        (0, 0, 0): rng.binomial(1, 0.40, 70).tolist(),  # untreated in the 30% village
        (0, 1, 0): rng.binomial(1, 0.55, 30).tolist(),
        (1, 0, 0): rng.binomial(1, 0.45, 50).tolist(),  # 50% village
        (1, 1, 0): rng.binomial(1, 0.65, 50).tolist(),
    }
    sample = ExperimentSample.from_strata(((0.3,), (0.5,)), strata)
    out = mes_choose(sample, (0.3, 0.5))
    print("estimated welfare:", {r: round(float(u), 4) for r, u in zip((0.3, 0.5), out.estimates.values)})
    """Picking a treatment fraction from experimental data.

Two villages were randomized to treat 30% and 50% of residents. We estimate
the welfare each fraction would deliver and pick the larger, then repeat the
exercise with fractions that differ by covariate cell.
"""

import numpy as np

from regret_design import ExperimentSample, PopulationProfile, RuleGrid, cmes_choose, mes_choose


def scalar_example():
    rng = np.random.default_rng(1)
    strata = {
        (0, 0, 0): rng.binomial(1, 0.40, 70).tolist(),  # untreated in the 30% village
        (0, 1, 0): rng.binomial(1, 0.55, 30).tolist(),
        (1, 0, 0): rng.binomial(1, 0.45, 50).tolist(),  # 50% village
        (1, 1, 0): rng.binomial(1, 0.65, 50).tolist(),
    }
    sample = ExperimentSample.from_strata(((0.3,), (0.5,)), strata)
    out = mes_choose(sample, (0.3, 0.5))
    print("estimated welfare:", {r: round(float(u), 4) for r, u in zip((0.3, 0.5), out.estimates.values)})
    print(f"chosen fraction: {out.chosen}" + (" (tie)" if out.tie else ""))


def covariate_example():
    # low-income residents (60% of the population) and everyone else
    profile = PopulationProfile((0.6, 0.4), ("low", "high"))
    rules = ((0.5, 0.5), (0.7, 0.2))
    rng = np.random.default_rng(2)
    means = {(0, 0, 0): 0.3, (0, 1, 0): 0.6, (0, 0, 1): 0.5, (0, 1, 1): 0.55,
             (1, 0, 0): 0.35, (1, 1, 0): 0.65, (1, 0, 1): 0.5, (1, 1, 1): 0.5}
    strata = {key: rng.binomial(1, m, 40).tolist() for key, m in means.items()}
    sample = ExperimentSample.from_strata(rules, strata, profile.cells)
    out = cmes_choose(sample, RuleGrid(rules, profile))
    for v, u in zip(rules, out.estimates.values):
        print(f"  rule {v}: estimated welfare {u:.4f}")
    print("chosen rule:", out.chosen)


if __name__ == "__main__":
    print("-- one fraction for everybody --")
    scalar_example()
    print("\n-- fractions by income cell --")
    covariate_example()



def covariate_example():
    # low-income residents (60% of the population) and everyone else
    profile = PopulationProfile((0.6, 0.4), ("low", "high"))
    rules = ((0.5, 0.5), (0.7, 0.2))
    rng = np.random.default_rng(2)
    means = {(0, 0, 0): 0.3, (0, 1, 0): 0.6, (0, 0, 1): 0.5, (0, 1, 1): 0.55,
             (1, 0, 0): 0.35, (1, 1, 0): 0.65, (1, 0, 1): 0.5, (1, 1, 1): 0.5}
    strata = {key: rng.binomial(1, m, 40).tolist() for key, m in means.items()}
    sample = ExperimentSample.from_strata(rules, strata, profile.cells)
    out = cmes_choose(sample, RuleGrid(rules, profile))
    for v, u in zip(rules, out.estimates.values):
        print(f"  rule {v}: estimated welfare {u:.4f}")
    print("chosen rule:", out.chosen)


if __name__ == "__main__":
    print("-- one fraction for everybody --")
    scalar_example()
    print("\n-- fractions by income cell --")
    covariate_example()
