import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import h_by_vertices, lg_by_vertices
from regret_design import (
    NoisePrecision,
    PopulationProfile,
    RuleGrid,
    StratumCounts,
    ValidationError,
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
    thm1_bounds,
    thm2_bounds,
    uniform_regret_cmes,
    uniform_regret_mes,
)

PAIR_RULES = ((0.5, 0.5), (0.7, 0.3))


def pair_grid(p):
    return RuleGrid(PAIR_RULES, PopulationProfile((p, 1 - p), ("low", "high")))


def wide(n10l, n11l, n20l, n21l, n10h, n11h, n20h, n21h):
    """Stratum counts from the eight-number (rule, treatment, cell) layout."""
    return StratumCounts([[[n10l, n10h], [n11l, n11h]], [[n20l, n20h], [n21l, n21h]]])


def test_hoeffding_tail_examples():
    S = 0.37
    assert hoeffding_tail(0.0, S) == 1.0
    assert hoeffding_tail(math.sqrt(S) / 2, S) == pytest.approx(math.exp(-0.5))
    assert hoeffding_tail(math.sqrt(S) / 2, S) == pytest.approx(0.60653, abs=5e-6)
    assert hoeffding_tail(math.sqrt(S), S) == pytest.approx(0.13534, abs=5e-6)
    with pytest.raises(ValidationError):
        hoeffding_tail(0.1, 0.0)
    with pytest.raises(ValidationError):
        hoeffding_tail(-0.1, 1.0)


def test_thm1_examples():
    assert thm1_bounds([0.42], [0.3]) == (0.42, 0.42)
    lo, hi = thm1_bounds([0.5, 0.5, 0.5], [0.1, 0.2, 0.3])
    assert lo == hi == 0.5
    A = noise_precision(StratumCounts([[[50], [0]], [[0], [50]]]), RuleGrid.from_ratios((0.0, 1.0)))
    np.testing.assert_allclose(A.values[:, 0], [0.02, 0.02])
    lo, hi = thm1_bounds([0.6, 0.4], A)
    assert hi == 0.6
    assert lo == pytest.approx(0.6 - math.exp(-2) * 0.2)
    assert lo == pytest.approx(0.57293, abs=5e-6)


def test_penalty_upper_examples():
    assert penalty_upper([0.3], 0) == 0.0
    assert penalty_upper([0.02, 0.02], 0) == pytest.approx(0.5 * math.exp(-0.5) * math.sqrt(0.04))
    assert penalty_upper([0.02, 0.02], 0) == pytest.approx(0.06065, abs=5e-6)
    grid = RuleGrid.from_ratios((0.2, 0.6, 0.9))
    c = StratumCounts([[[4], [3]], [[5], [6]], [[2], [7]]])
    a = penalty_upper(noise_precision(c, grid), 1)
    b = penalty_upper(noise_precision(StratumCounts(c.counts * 2), grid), 1)
    assert b == pytest.approx(a / math.sqrt(2))


def test_uniform_mes_examples():
    assert uniform_regret_mes([0.3]) == 0.0
    assert uniform_regret_mes([0.02, 0.02]) == pytest.approx(0.06065, abs=5e-6)
    with pytest.raises(ValidationError):
        uniform_regret_mes(np.ones((2, 2)))


def test_thm2_single_cell_matches_thm1():
    U, A = [0.3, 0.7, 0.65], [0.1, 0.04, 0.2]
    assert thm2_bounds(U, A, PopulationProfile.single()) == thm1_bounds(U, A)


def test_thm2_equal_welfares():
    lo, hi = thm2_bounds([0.4, 0.4], np.full((2, 2), 0.3), PopulationProfile((0.5, 0.5)))
    assert lo == hi == 0.4


def test_thm2_with_small_table_counts():
    grid = pair_grid(0.5)
    A = noise_precision(wide(2, 2, 2, 3, 2, 2, 3, 2), grid)
    # rule (0.5,0.5): 0.25/2 + 0.25/2 in both cells; rule (0.7,0.3): 0.09/2 + 0.49/3 in both cells
    np.testing.assert_allclose(A.values, [[0.25, 0.25], [0.09 / 2 + 0.49 / 3] * 2])
    S = 2 * 0.25 * (0.25 + 0.09 / 2 + 0.49 / 3)
    assert S == pytest.approx(0.22917, abs=5e-6)
    lo, hi = thm2_bounds([0.7, 0.5], A, grid.profile)
    assert hi == 0.7
    assert lo == pytest.approx(0.7 - math.exp(-2 * 0.04 / S) * 0.2, rel=1e-12)


@pytest.mark.parametrize(
    "p,counts,expected,tol",
    [
        (0.5, (2, 2, 2, 3, 2, 2, 3, 2), 0.145, 5e-4),
        (0.9, (4, 4, 3, 6, 1, 1, 1, 1), 0.136, 5e-4),
        (0.99, (1450, 1450, 870, 2030, 15, 15, 21, 9), 0.00792, 2e-5),
    ],
)
def test_uniform_cmes_matches_stored_rows(p, counts, expected, tol):
    grid = pair_grid(p)
    A = noise_precision(wide(*counts), grid)
    assert uniform_regret_cmes(A, grid.profile) == pytest.approx(expected, abs=tol)


def test_uniform_cmes_keeps_tied_rules():
    A = NoisePrecision([[0.02], [0.02], [0.01]])
    expected = 0.5 * math.exp(-0.5) * (math.sqrt(0.04) + math.sqrt(0.03))
    assert uniform_regret_cmes(A, PopulationProfile.single()) == pytest.approx(expected)


def test_corollary1_equivalences():
    grid = pair_grid(0.5)
    A = noise_precision(wide(2, 2, 2, 3, 2, 2, 3, 2), grid)
    assert corollary1_bounds([0.7, 0.5], A, grid.profile) == thm2_bounds([0.7, 0.5], A, grid.profile)
    # one coarse cell: same as the single-cell bound on collapsed rules
    Az = NoisePrecision([[0.11], [0.07]])
    assert corollary1_bounds([0.6, 0.45], Az, PopulationProfile.single()) == thm1_bounds([0.6, 0.45], Az)


def test_frechet_examples():
    assert frechet_lower_bound([0.42], [0.1]) == 0.42
    assert frechet_lower_bound([0.6, 0.4], [1e-9, 1e-9]) == pytest.approx(0.6)
    assert frechet_lower_bound([0.6, 0.4], [0.02, 0.02]) == pytest.approx((1 - math.exp(-2)) * 0.6)
    assert frechet_lower_bound([0.6, 0.4], [0.02, 0.02]) == pytest.approx(0.51880, abs=5e-6)


def test_frechet_as_written_can_exceed_the_upper_bound():
    # precise estimates make every tail vanish, so the literal version credits each arm in full
    U, A = [0.6, 0.5], [1e-4, 1e-4]
    assert frechet_lower_bound(U, A, as_written=True) == pytest.approx(1.1)
    assert frechet_lower_bound(U, A, as_written=True) > thm1_bounds(U, A)[1]
    assert frechet_lower_bound(U, A) <= thm1_bounds(U, A)[1]


def test_bound_report_fields():
    grid = pair_grid(0.5)
    rep = bound_report(wide(2, 2, 2, 3, 2, 2, 3, 2), grid, [0.5, 0.7])
    assert rep.welfare_lower <= rep.welfare_upper
    assert 0 <= rep.penalty <= rep.penalty_upper
    assert rep.best_rule == 1 and rep.reference_rule == 0
    bare = bound_report(wide(2, 2, 2, 3, 2, 2, 3, 2), grid)
    assert bare.welfare_lower is None and bare.uniform_regret_upper == rep.uniform_regret_upper


# --- coarser partitions -------------------------------------------------------


def test_lg_identical_partition_is_zero():
    grid = pair_grid(0.5)
    assert lg_gap(grid, grid) == 0.0


def test_lg_matches_stored_lower_bound_p09():
    x = pair_grid(0.9)
    z = coarsen_grid(x, [0, 0])
    assert lg_gap(x, z, [0, 0]) == pytest.approx(0.072, abs=1e-12)
    assert lg_gap(x, z, [0, 0], method="lp") == pytest.approx(0.072, abs=1e-9)


def test_coarsening_keeps_exposures():
    x = pair_grid(0.3)
    z = coarsen_grid(x, [0, 0])
    np.testing.assert_allclose(z.exposures, x.exposures)
    assert coarse_profile(x.profile, [0, 0]).probs == (1.0,)


@pytest.mark.parametrize("p", [0.1, 0.35, 0.5, 0.9])
def test_lg_toy_instance_against_brute_force(p):
    x = pair_grid(p)
    z = coarsen_grid(x, [0, 0])
    expected = lg_by_vertices(x.vectors, z.vectors, (p, 1 - p))
    assert lg_gap(x, z, [0, 0]) == pytest.approx(expected, abs=1e-12)
    assert lg_gap(x, z, [0, 0], method="lp") == pytest.approx(expected, abs=1e-9)


def test_lg_shared_exposure_toy():
    # both fine rules share exposure 0.5, so their means coincide
    prof = PopulationProfile((0.5, 0.5))
    x = RuleGrid(((1.0, 0.0), (0.0, 1.0)), prof)
    z = RuleGrid(((0.5, 0.5),), prof)
    expected = lg_by_vertices(x.vectors, z.vectors, (0.5, 0.5))
    assert expected > 0
    assert lg_gap(x, z, [0, 0]) == pytest.approx(expected, abs=1e-12)


def test_lg_rejects_bad_inputs():
    x = pair_grid(0.5)
    with pytest.raises(ValidationError):
        lg_gap(x, x, [0, 0])  # rules vary inside the single coarse cell
    with pytest.raises(ValidationError):
        lg_gap(x, coarsen_grid(x, [0, 0]), [0, 0], max_bits=3)
    with pytest.raises(ValidationError):
        lg_gap(x, coarsen_grid(x, [0, 0]), [0, 0], method="simplex")


def test_h_upper_limits():
    x = pair_grid(0.5)
    z = coarsen_grid(x, [0, 0])
    zero = np.zeros((len(z), 1))
    assert h_upper(x, z, zero, [0, 0]) == pytest.approx(lg_gap(x, z, [0, 0]), abs=1e-12)
    A = np.full((2, 2), 0.05)
    h_same = h_upper(x, x, A)
    agg = A @ (x.profile.p ** 2)
    expected = h_by_vertices(x.vectors, x.vectors, (0.5, 0.5), agg)
    assert h_same == pytest.approx(expected, abs=1e-12)
    assert h_same > 0


@pytest.mark.parametrize("p", [0.2, 0.5, 0.8])  # at 0.5 both rules coarsen to one
def test_h_upper_toy_against_brute_force(p):
    x = pair_grid(p)
    z = coarsen_grid(x, [0, 0])
    Az = np.array([[0.03], [0.08]])[: len(z)]
    expected = h_by_vertices(x.vectors, z.vectors, (p, 1 - p), Az[:, 0])
    got = h_upper(x, z, Az, [0, 0])
    assert got == pytest.approx(expected, abs=1e-12)
    assert got >= lg_gap(x, z, [0, 0]) - 1e-15


# --- properties ---------------------------------------------------------------

counts8 = st.lists(st.integers(1, 40), min_size=8, max_size=8)


@given(counts8, st.integers(0, 7), st.integers(1, 20), st.floats(0.05, 0.95),
       st.lists(st.floats(0, 1), min_size=2, max_size=2))
def test_bounds_tighten_as_counts_grow(c, i, extra, p, U):
    grid = pair_grid(p)
    bigger = list(c)
    bigger[i] += extra
    A0 = noise_precision(wide(*c), grid)
    A1 = noise_precision(wide(*bigger), grid)
    assert np.all(A1.values <= A0.values)
    assert uniform_regret_cmes(A1, grid.profile) <= uniform_regret_cmes(A0, grid.profile) + 1e-15
    D0, b = penalty(U, A0, grid.profile)
    D1, _ = penalty(U, A1, grid.profile)
    assert D1 <= D0 + 1e-15
    assert penalty_upper(A1, b, grid.profile) <= penalty_upper(A0, b, grid.profile) + 1e-15
    assert thm2_bounds(U, A1, grid.profile)[0] >= thm2_bounds(U, A0, grid.profile)[0] - 1e-15


@given(st.floats(1e-6, 10), st.floats(0, 5))
def test_envelope(S, d):
    assert hoeffding_tail(d, S) * d <= 0.5 * math.exp(-0.5) * math.sqrt(S) + 1e-15


def test_envelope_on_a_grid():
    S = 0.08
    d = np.linspace(0, 1, 10_001)
    vals = np.exp(-2 * d**2 / S) * d
    assert vals.max() <= 0.5 * math.exp(-0.5) * math.sqrt(S) + 1e-15
    assert d[np.argmax(vals)] == pytest.approx(math.sqrt(S) / 2, abs=1e-4)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=6), st.data())
def test_uniform_bound_dominates_every_state(U, data):
    K = len(U)
    A = np.array(data.draw(st.lists(st.floats(1e-4, 1.0), min_size=K, max_size=K)))
    D, best = penalty(U, A)
    assert D <= penalty_upper(A, best) + 1e-12
    assert D <= uniform_regret_mes(A) + 1e-12
    lo, hi = thm1_bounds(U, A)
    assert lo <= hi
    assert frechet_lower_bound(U, A) <= hi
