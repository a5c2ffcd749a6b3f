"""Finite-sample welfare and maximum-regret bounds for empirical-success rules.

All bounds are driven by the per-stratum noise precision
``A[k, l] = (1 - pi)**2 / N0 + pi**2 / N1`` and by Hoeffding tails of the
form ``exp(-2 * gap**2 / S)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import ValidationError
from .model import TOL, PopulationProfile, RuleGrid, StratumCounts, unique_exposures

#: Maximum of ``exp(-2 d**2 / S) * d`` over ``d >= 0`` is ``HALF_EXP * sqrt(S)``.
HALF_EXP = 0.5 * math.exp(-0.5)

MAX_VERTEX_BITS = 24


@dataclass(frozen=True)
class NoisePrecision:
    """Variance proxies ``A[k, l]`` for each rule and covariate cell."""

    values: np.ndarray

    def __post_init__(self):
        a = np.array(self.values, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2 or a.shape[0] < 1:
            raise ValidationError(f"precision table must be (K, L), got shape {a.shape}")
        if np.any(~np.isfinite(a)) or np.any(a < 0):
            raise ValidationError("noise precisions must be finite and nonnegative")
        a.setflags(write=False)
        object.__setattr__(self, "values", a)

    @property
    def n_rules(self) -> int:
        return self.values.shape[0]

    @property
    def n_cells(self) -> int:
        return self.values.shape[1]


def noise_precision(counts: StratumCounts, grid: RuleGrid) -> NoisePrecision:
    """Precision table implied by stratum counts.

    Endpoint fractions drop the term whose stratum is structurally empty.
    """
    counts.check(grid)
    P = grid.matrix
    N = counts.counts.astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a0 = np.where(P < 1, (1 - P) ** 2 / N[:, 0, :], 0.0)
        a1 = np.where(P > 0, P**2 / N[:, 1, :], 0.0)
    return NoisePrecision(a0 + a1)


def saturation_precision(alphas, n_total: float) -> NoisePrecision:
    """Precision ``1 / (alpha_k * N)`` of an arm receiving a share ``alpha_k`` of ``N``."""
    a = np.asarray(alphas, dtype=float)
    if np.any(a <= 0) or n_total <= 0:
        raise ValidationError("every arm needs a positive share of a positive sample")
    return NoisePrecision(1.0 / (a * n_total))


def hoeffding_tail(delta: float, S: float) -> float:
    """Hoeffding bound ``exp(-2 * delta**2 / S)`` on the chance a gap of ``delta`` flips."""
    if S <= 0:
        raise ValidationError("variance proxy must be positive")
    if delta < 0:
        raise ValidationError("gap must be nonnegative")
    return math.exp(-2.0 * delta * delta / S)


def _tails(delta, S):
    """Elementwise Hoeffding tails; a zero gap gives 1 and a zero proxy gives 0."""
    delta = np.asarray(delta, dtype=float)
    S = np.asarray(S, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.exp(-2.0 * delta**2 / S)
    out = np.where(S > 0, out, 0.0)
    return np.where(delta > 0, out, 1.0)


def _weights(precisions: NoisePrecision, profile: PopulationProfile | None) -> np.ndarray:
    if profile is None:
        if precisions.n_cells != 1:
            raise ValidationError("precision table has several cells; pass a profile")
        return np.ones(1)
    if len(profile) != precisions.n_cells:
        raise ValidationError("profile and precision table disagree on the number of cells")
    return profile.p


def _best(values) -> int:
    # exact argmax (first on exact ties): a tolerance here could make gaps negative
    return int(np.argmax(np.asarray(values, dtype=float)))


def _as_precision(p) -> NoisePrecision:
    return p if isinstance(p, NoisePrecision) else NoisePrecision(p)


def _welfares(welfares, K):
    U = np.asarray(welfares, dtype=float).ravel()
    if U.size != K:
        raise ValidationError(f"expected {K} welfare values, got {U.size}")
    if not np.all(np.isfinite(U)):
        raise ValidationError("welfare values must be finite")
    return U


def penalty(welfares, precisions, profile: PopulationProfile | None = None) -> tuple[float, int]:
    """Finite-sample penalty ``D`` and the index of the best rule.

    ``D = sum_k exp(-2 gap_k**2 / S_k) * gap_k`` with ``gap_k`` the welfare
    shortfall of rule ``k`` and ``S_k = sum_l p_l**2 (A_kl + A_best,l)``.
    """
    A = _as_precision(precisions)
    U = _welfares(welfares, A.n_rules)
    w2 = _weights(A, profile) ** 2
    best = _best(U)
    gaps = U[best] - U
    S = (A.values + A.values[best]) @ w2
    return float(np.sum(_tails(gaps, S) * gaps)), best


def thm2_bounds(grid_welfares, precisions, profile: PopulationProfile | None = None) -> tuple[float, float]:
    """Lower and upper bound on the expected welfare of the covariate-dependent rule."""
    U = np.asarray(grid_welfares, dtype=float)
    D, best = penalty(U, precisions, profile)
    return float(U.ravel()[best] - D), float(U.ravel()[best])


def thm1_bounds(welfares, precisions) -> tuple[float, float]:
    """Lower and upper bound on the expected welfare of the MES rule."""
    A = _as_precision(precisions)
    if A.n_cells != 1:
        raise ValidationError("single-cell bound needs a (K,) or (K, 1) precision table")
    return thm2_bounds(welfares, A, PopulationProfile.single())


def corollary1_bounds(z_grid_welfares, z_precisions, z_profile: PopulationProfile) -> tuple[float, float]:
    """Welfare bounds for the rule that conditions on a coarser partition."""
    return thm2_bounds(z_grid_welfares, z_precisions, z_profile)


def penalty_upper(precisions, best: int, profile: PopulationProfile | None = None) -> float:
    """Gap-free ceiling on the penalty when rule ``best`` is optimal."""
    A = _as_precision(precisions)
    if not 0 <= best < A.n_rules:
        raise ValidationError(f"best index {best} out of range")
    w2 = _weights(A, profile) ** 2
    S = (A.values + A.values[best]) @ w2
    return float(HALF_EXP * np.sum(np.sqrt(np.delete(S, best))))


def reference_rule(precisions, profile: PopulationProfile | None = None) -> int:
    """Rule with the largest weighted precision ``sum_l p_l**2 A_kl`` (first on ties)."""
    A = _as_precision(precisions)
    agg = A.values @ (_weights(A, profile) ** 2)
    return int(np.flatnonzero(agg == agg.max())[0])


def uniform_regret_cmes(precisions, profile: PopulationProfile | None = None) -> float:
    """State-free upper bound on the maximum regret of the covariate-dependent rule.

    The noisiest rule (by weighted precision) stands in for the unknown best
    rule; every other rule, including exact ties, enters the sum.
    """
    return penalty_upper(precisions, reference_rule(precisions, profile), profile)


def uniform_regret_mes(precisions) -> float:
    """State-free upper bound on the maximum regret of the MES rule."""
    A = _as_precision(precisions)
    if A.n_cells != 1:
        raise ValidationError("single-cell bound needs a (K,) or (K, 1) precision table")
    return uniform_regret_cmes(A, PopulationProfile.single())


def frechet_lower_bound(welfares, precisions, as_written: bool = False) -> float:
    """Copula-based lower bound on the expected welfare of the MES rule.

    By default only the best rule's term is kept, since a Hoeffding tail
    bounds ``P(U_j >= U_k)`` only when ``k`` is the better rule. With
    ``as_written=True`` every rule contributes its term; that variant is not
    a valid bound and exists for reproduction only.
    """
    A = _as_precision(precisions)
    if A.n_cells != 1:
        raise ValidationError("single-cell bound needs a (K,) or (K, 1) precision table")
    U = _welfares(welfares, A.n_rules)
    a = A.values[:, 0]
    gaps = np.abs(U[:, None] - U[None, :])
    tails = _tails(gaps, a[:, None] + a[None, :])
    np.fill_diagonal(tails, 0.0)
    mass = np.maximum(1.0 - tails.sum(axis=0), 0.0)
    if as_written:
        return float(mass @ U)
    best = _best(U)
    return float(mass[best] * U[best])


@dataclass(frozen=True)
class BoundReport:
    welfare_lower: float | None
    welfare_upper: float | None
    penalty: float | None
    penalty_upper: float | None
    uniform_regret_upper: float
    best_rule: int | None
    reference_rule: int
    precisions: NoisePrecision


def bound_report(counts: StratumCounts, grid: RuleGrid, welfares=None) -> BoundReport:
    """Every bound that the counts (and optionally true welfares) determine."""
    A = noise_precision(counts, grid)
    ref = reference_rule(A, grid.profile)
    uni = uniform_regret_cmes(A, grid.profile)
    if welfares is None:
        return BoundReport(None, None, None, None, uni, None, ref, A)
    D, best = penalty(welfares, A, grid.profile)
    U = np.asarray(welfares, dtype=float)
    return BoundReport(float(U[best] - D), float(U[best]), D, penalty_upper(A, best, grid.profile), uni, best, ref, A)


# ---------------------------------------------------------------------------
# coarser partitions: L_G and H


def coarsen_grid(x_grid: RuleGrid, z_map) -> RuleGrid:
    """Rules that condition only on the coarser partition ``z_map``.

    ``z_map[l]`` is the coarse cell of fine cell ``l``. Each fine rule becomes
    the rule treating, in every coarse cell, the population-weighted share it
    treated there; exposures are unchanged. The result is written on the fine
    cells (constant within each coarse cell), with duplicates removed.
    """
    zm = np.asarray(z_map, dtype=int)
    p = x_grid.profile.p
    if zm.size != p.size:
        raise ValidationError("z_map needs one entry per fine cell")
    out: list[tuple[float, ...]] = []
    for v in x_grid.matrix:
        w = np.empty_like(v)
        for g in np.unique(zm):
            sel = zm == g
            mass = p[sel].sum()
            if np.ptp(v[sel]) == 0:
                w[sel] = v[sel]  # already constant: keep bit-for-bit
            else:
                w[sel] = (p[sel] @ v[sel]) / mass if mass > 0 else v[sel].mean()
        w = np.clip(w, 0.0, 1.0)
        if not any(np.all(np.abs(np.asarray(o) - w) <= TOL) for o in out):
            out.append(tuple(float(x) for x in w))
    return RuleGrid(tuple(out), x_grid.profile)


def coarse_profile(profile: PopulationProfile, z_map) -> PopulationProfile:
    zm = np.asarray(z_map, dtype=int)
    groups = np.unique(zm)
    probs = [float(profile.p[zm == g].sum()) for g in groups]
    return PopulationProfile(tuple(probs), tuple(f"z{g + 1}" for g in groups))


def _check_coarsening(x_grid: RuleGrid, z_grid: RuleGrid, z_map):
    if x_grid.profile != z_grid.profile:
        raise ValidationError("both grids must be written on the same fine profile")
    if z_map is None:
        return
    zm = np.asarray(z_map, dtype=int)
    if zm.size != x_grid.n_cells:
        raise ValidationError("z_map needs one entry per fine cell")
    for v in z_grid.matrix:
        for g in np.unique(zm):
            if np.ptp(v[zm == g]) > TOL:
                raise ValidationError(f"rule {tuple(v)} is not constant on coarse cell {g}")


def _coefficients(grid: RuleGrid, exposures: np.ndarray) -> np.ndarray:
    """Welfare of each rule as a linear map of the flattened ``(2, L, E)`` means."""
    L, E = grid.n_cells, exposures.size
    p = grid.profile.p
    C = np.zeros((len(grid), 2 * L * E))
    for k, (v, x) in enumerate(zip(grid.matrix, grid.exposures)):
        e = int(np.argmin(np.abs(exposures - x)))
        for l in range(L):
            C[k, 0 * L * E + l * E + e] += p[l] * (1 - v[l])
            C[k, 1 * L * E + l * E + e] += p[l] * v[l]
    return C


def _vertex_chunks(n_bits: int, chunk: int = 1 << 16):
    shifts = np.arange(n_bits, dtype=np.int64)
    for start in range(0, 1 << n_bits, chunk):
        ints = np.arange(start, min(start + chunk, 1 << n_bits), dtype=np.int64)
        yield ((ints[:, None] >> shifts) & 1).astype(float)


def _setup(x_grid, z_grid, z_map, max_bits):
    _check_coarsening(x_grid, z_grid, z_map)
    expo = unique_exposures(np.concatenate([x_grid.exposures, z_grid.exposures]))
    n_bits = 2 * x_grid.n_cells * expo.size
    if n_bits > max_bits:
        raise ValidationError(f"vertex enumeration over 2**{n_bits} states exceeds the 2**{max_bits} guard")
    return _coefficients(x_grid, expo), _coefficients(z_grid, expo), n_bits


def lg_gap(x_grid: RuleGrid, z_grid: RuleGrid, z_map=None, method: str = "vertex",
           max_bits: int = MAX_VERTEX_BITS) -> float:
    """Worst-case welfare lost by conditioning on the coarser partition.

    Returns ``sup_theta [max_k U_x(k) - max_j U_z(j)]`` floored at 0, with the
    supremum taken over mean tables in ``[0, 1]``. ``method="vertex"``
    enumerates 0/1 mean tables; ``method="lp"`` solves one linear program
    per fine rule and covers interior states as well.
    """
    CX, CZ, n_bits = _setup(x_grid, z_grid, z_map, max_bits)
    if method == "vertex":
        best = 0.0
        for V in _vertex_chunks(n_bits):
            gap = (V @ CX.T).max(axis=1) - (V @ CZ.T).max(axis=1)
            best = max(best, float(gap.max()))
        return best
    if method == "lp":
        best = 0.0
        n = CX.shape[1]
        for cx in CX:
            # maximize s subject to s <= (cx - cz_j) . m for all j, 0 <= m <= 1
            A_ub = np.hstack([-(cx - CZ), np.ones((CZ.shape[0], 1))])
            c = np.zeros(n + 1)
            c[-1] = -1.0
            res = linprog(c, A_ub=A_ub, b_ub=np.zeros(CZ.shape[0]),
                          bounds=[(0, 1)] * n + [(None, None)], method="highs")
            if not res.success:
                raise RuntimeError(f"linear program failed: {res.message}")
            best = max(best, -float(res.fun))
        return best
    raise ValidationError(f"unknown method {method!r}")


def h_upper(x_grid: RuleGrid, z_grid: RuleGrid, z_precisions, z_map=None,
            max_bits: int = MAX_VERTEX_BITS) -> float:
    """Upper end of the maximum-regret range for the coarse rule.

    Maximizes, over 0/1 mean tables, the fine-versus-coarse welfare gap plus
    the coarse rule's finite-sample penalty. ``z_precisions`` is ``(K', L')``
    with one row per rule of ``z_grid`` and one column per coarse cell; with
    ``z_map=None`` the coarse cells are the fine cells.
    """
    CX, CZ, n_bits = _setup(x_grid, z_grid, z_map, max_bits)
    A = _as_precision(z_precisions)
    if z_map is None:
        zp = x_grid.profile
    else:
        zp = coarse_profile(x_grid.profile, z_map)
    if A.n_rules != len(z_grid) or A.n_cells != len(zp):
        raise ValidationError(f"z_precisions must have shape ({len(z_grid)}, {len(zp)})")
    agg = A.values @ (zp.p**2)
    best_val = 0.0
    for V in _vertex_chunks(n_bits):
        UX = V @ CX.T
        UZ = V @ CZ.T
        top = UZ.max(axis=1, keepdims=True)
        b = np.argmax(UZ >= top - TOL, axis=1)
        gaps = top - UZ
        S = agg[None, :] + agg[b][:, None]
        D = np.sum(_tails(gaps, S) * gaps, axis=1)
        h = UX.max(axis=1) - top[:, 0] + D
        best_val = max(best_val, float(h.max()))
    return best_val
