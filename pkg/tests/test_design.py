import csv
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import refined_grid_search, saturation_grid_search
from regret_design import (
    ExplicitCounts,
    InfeasibleError,
    PopulationProfile,
    ProportionalRounding,
    RuleGrid,
    StratumCounts,
    ValidationError,
    allocate_counts,
    load_fixture,
    noise_precision,
    optimize_saturation,
    saturation_objective,
    sufficient_sample_size,
    uniform_regret_cmes,
)
from regret_design.io import FIXTURES


def test_single_ratio():
    d = optimize_saturation((0.4,), 10)
    assert d.alphas == (1.0,)


@pytest.mark.parametrize("n", [2, 3, 17, 100, 5875, 10**6])
def test_two_ratios_split_evenly(n):
    d = optimize_saturation((0.0, 1.0), n)
    assert d.alphas == (0.5, 0.5)


def test_three_ratios_against_grid_oracle():
    d = optimize_saturation((0.1, 0.5, 0.9), 300)
    coarse, _ = saturation_grid_search(3, 300, 1e-3)
    fine, _ = refined_grid_search(3, 300, 1e-3)
    assert d.objective <= coarse + 1e-6
    assert abs(d.objective - fine) <= 1e-6
    assert d.objective == pytest.approx(saturation_objective(d.alphas, 300))


@settings(max_examples=10)
@given(st.integers(3, 4), st.integers(4, 5000), st.data())
def test_optimizer_against_refined_grid(K, n, data):
    ref = data.draw(st.integers(0, K - 1))
    d = optimize_saturation(tuple(np.linspace(0, 1, K)), n, reference=ref)
    a = np.asarray(d.alphas)
    assert abs(a.sum() - 1) <= 1e-12
    assert np.all(a[ref] <= a)
    best, _ = refined_grid_search(K, n, 1e-2 if K == 4 else 1e-3, reference=ref)
    assert abs(d.objective - best) <= 1e-6


def test_optimizer_is_infeasible_below_k():
    with pytest.raises(InfeasibleError):
        optimize_saturation((0.1, 0.5, 0.9), 2)
    with pytest.raises(ValidationError):
        optimize_saturation((0.1, 0.5), 10, reference=3)


def test_rounding_endpoint_arms():
    grid = RuleGrid.from_ratios((0.0, 1.0))
    c = allocate_counts(100, ProportionalRounding(), grid)
    np.testing.assert_array_equal(c.counts[:, :, 0], [[50, 0], [0, 50]])


def test_rounding_needs_enough_people():
    grid = RuleGrid.from_ratios((0.2, 0.5, 0.8))
    with pytest.raises(InfeasibleError):
        allocate_counts(5, ProportionalRounding(), grid)


@given(st.integers(8, 3000), st.floats(0.05, 0.95),
       st.lists(st.floats(0.05, 1.0), min_size=2, max_size=2))
def test_rounding_invariants(n, p, w):
    grid = RuleGrid(((0.5, 0.5), (0.7, 0.3)), PopulationProfile((p, 1 - p)))
    shares = tuple(np.asarray(w) / sum(w))
    c = allocate_counts(n, ProportionalRounding(shares), grid)
    assert c.total == n
    c.check(grid)


def _fixture_rows(name):
    text = resources.files("regret_design").joinpath("data", FIXTURES[name]).read_text()
    return list(csv.DictReader(ln for ln in text.splitlines() if not ln.startswith("#")))


@pytest.mark.parametrize("name", list(FIXTURES))
def test_explicit_policy_returns_stored_cells(name):
    table = load_fixture(name)
    policy = table.policy()
    for raw in _fixture_rows(name):
        n = int(raw["N"])
        c = allocate_counts(n, policy, table.grid)
        for k in range(2):
            for t in range(2):
                for l, cell in enumerate(("low", "high")):
                    assert str(c.counts[k, t, l]) == raw[f"N_{k + 1}_{t}_{cell}"]


def test_explicit_rows_from_the_fixtures():
    def flat(c):
        return tuple(int(c.counts[k, t, l]) for l in range(2) for k in range(2) for t in range(2))

    t = load_fixture("p050")
    assert flat(allocate_counts(18, t.policy(), t.grid)) == (2, 2, 2, 3, 2, 2, 3, 2)
    t = load_fixture("p010")
    assert flat(allocate_counts(21, t.policy(), t.grid)) == (1, 1, 1, 1, 4, 4, 6, 3)
    with pytest.raises(InfeasibleError):
        allocate_counts(19, t.policy(), t.grid)


def test_sample_size_examples():
    t = load_fixture("p050")
    assert sufficient_sample_size(0.250, t.policy(), t.grid).n == 18
    t = load_fixture("p099")
    res = sufficient_sample_size(0.00792, t.policy(), t.grid)
    assert res.n == 5875
    assert res.trace[-2][0] == 5860 and res.trace[-2][1] >= 0.00792
    assert sufficient_sample_size(1.0, t.policy(), t.grid).n == 21
    assert sufficient_sample_size(1e-4, t.policy(), t.grid).n is None
    with pytest.raises(ValidationError):
        sufficient_sample_size(0.0, t.policy(), t.grid)


def test_integer_scan_with_rounding_policy():
    grid = RuleGrid(((0.5, 0.5), (0.7, 0.3)), PopulationProfile((0.5, 0.5)))
    res = sufficient_sample_size(0.25, ProportionalRounding(), grid, n_max=100, scan="integers")
    assert res.n is not None
    c = allocate_counts(res.n, ProportionalRounding(), grid)
    assert uniform_regret_cmes(noise_precision(c, grid), grid.profile) < 0.25
    # every smaller feasible N was scanned and failed
    assert all(b >= 0.25 for n, b in res.trace[:-1])
    with pytest.raises(ValidationError):
        sufficient_sample_size(0.25, ProportionalRounding(), grid)


def test_integer_scan_over_explicit_table_skips_missing_sizes():
    t = load_fixture("p050")
    res = sufficient_sample_size(0.09, t.policy(), t.grid, scan="integers")
    assert res.n == 50
    assert [n for n, _ in res.trace] == [18, 34, 50]


@given(st.floats(0.005, 0.3), st.floats(0.005, 0.3), st.sampled_from(list(FIXTURES)))
def test_sample_size_monotone_in_threshold(a, b, name):
    lo, hi = sorted((a, b))
    t = load_fixture(name)
    n_lo = sufficient_sample_size(lo, t.policy(), t.grid).n
    n_hi = sufficient_sample_size(hi, t.policy(), t.grid).n
    if n_lo is not None:
        assert n_hi is not None and n_hi <= n_lo


def test_explicit_counts_policy_object():
    c = StratumCounts([[[1], [1]]])
    pol = ExplicitCounts({2: c})
    assert pol.sizes() == [2]
    assert allocate_counts(2, pol, RuleGrid.from_ratios((0.5,))) == c
