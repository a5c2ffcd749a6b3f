"""Choosing treatment fractions under social interaction.

Empirical-success rules over treatment fractions, their finite-sample welfare
and maximum-regret bounds, randomized saturation designs and a Monte Carlo
harness for checking all of it.
"""

from .bounds import (
    BoundReport,
    NoisePrecision,
    bound_report,
    coarse_profile,
    coarsen_grid,
    corollary1_bounds,
    frechet_lower_bound,
    h_upper,
    hoeffding_tail,
    lg_gap,
    noise_precision,
    penalty,
    penalty_upper,
    reference_rule,
    saturation_precision,
    thm1_bounds,
    thm2_bounds,
    uniform_regret_cmes,
    uniform_regret_mes,
)
from .design import (
    ExplicitCounts,
    ProportionalRounding,
    SampleSizeSearch,
    SaturationDesign,
    allocate_counts,
    optimize_saturation,
    saturation_objective,
    sufficient_sample_size,
)
from .errors import (
    EmptyStratum,
    InfeasibleError,
    MissingCell,
    MissingMeanError,
    RegretDesignError,
    TieError,
    ValidationError,
)
from .estimators import (
    ContrastStatistic,
    DecisionOutcome,
    WelfareEstimate,
    cmes_choose,
    empirical_arm_welfare,
    estimate_grid,
    mes_choose,
    plugin_rule,
    vmes_vectorize,
    vmes_winner,
    welfare_contrast,
)
from .io import load_fixture, read_counts_csv, read_sample_csv
from .model import (
    ExperimentSample,
    PopulationProfile,
    RatioSet,
    RuleGrid,
    StateOfNature,
    StratumCounts,
    grid_welfare,
    grid_welfares,
    oracle_regret,
    population_welfare,
)
from .montecarlo import (
    SimulationConfig,
    SimulationReport,
    exact_expected_welfare,
    rule_performance,
    scaled_regret_curve,
    simulate_sample,
    verify_bounds,
)

__version__ = "0.1.0"
