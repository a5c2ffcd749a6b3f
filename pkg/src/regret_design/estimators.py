"""Empirical welfare and the empirical-success family of decision rules.

``mes_choose`` picks the treatment fraction with the largest estimated
welfare. ``cmes_choose`` does the same over vectors of per-cell fractions,
aggregating cell estimates with population cell probabilities.
``vmes_vectorize`` rewrites an MES decision as the vector of all pairwise
comparisons, and ``plugin_rule`` is the studentized pairwise threshold rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyStratum, MissingCell, TieError, ValidationError
from .model import TOL, ExperimentSample, PopulationProfile, RatioSet, RuleGrid, StratumCounts


@dataclass(frozen=True)
class WelfareEstimate:
    """Estimated welfare per rule plus the per-cell pieces it was built from."""

    values: np.ndarray
    cell_values: np.ndarray
    counts: StratumCounts
    rules: tuple[tuple[float, ...], ...] = ()

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class DecisionOutcome:
    chosen_index: int
    chosen: object
    tie: bool
    estimates: WelfareEstimate


@dataclass(frozen=True)
class ContrastStatistic:
    """Estimated welfare difference between rules ``pair[0]`` and ``pair[1]``."""

    pair: tuple[int, int]
    estimate: float
    stderr: float | None = None

    def reversed(self) -> "ContrastStatistic":
        return ContrastStatistic((self.pair[1], self.pair[0]), -self.estimate, self.stderr)


def welfare_from_means(means, rules, weights) -> np.ndarray:
    """Welfare of each rule from stratum means.

    ``means`` has shape ``(..., K, 2, L)``, ``rules`` shape ``(K, L)``.
    The treated term is dropped for a zero fraction and the untreated term for
    a fraction of one, so empty strata there are harmless. A NaN in a stratum
    the rule needs propagates to that rule's value.
    """
    P = np.asarray(rules, dtype=float)
    m = np.asarray(means, dtype=float)
    w = np.asarray(weights, dtype=float)
    with np.errstate(invalid="ignore"):
        t0 = np.where(P < 1.0, (1.0 - P) * m[..., 0, :], 0.0)
        t1 = np.where(P > 0.0, P * m[..., 1, :], 0.0)
    return (t0 + t1) @ w


def choose_index(values) -> tuple[int, bool]:
    """Argmax with ties (within ``TOL``) broken toward the smallest index."""
    v = np.asarray(values, dtype=float)
    top = np.flatnonzero(v >= v.max() - TOL)
    return int(top[0]), bool(top.size > 1)


def _match_arms(sample: ExperimentSample, rules) -> np.ndarray:
    """Index of the sample arm that ran each requested rule."""
    have = np.asarray(sample.rules, dtype=float)
    out = []
    for r in np.asarray(rules, dtype=float):
        hits = np.flatnonzero(np.all(np.abs(have - r) <= TOL, axis=1))
        if hits.size == 0:
            raise MissingCell(f"no sampled arm ran rule {tuple(r)}")
        out.append(int(hits[0]))
    return np.asarray(out, dtype=np.int64)


def _check_required(means, rules, arm_ids, cells):
    P = np.asarray(rules)
    need = np.stack([P < 1.0, P > 0.0], axis=1)
    bad = np.argwhere(need & np.isnan(means))
    if bad.size:
        k, t, l = bad[0]
        raise EmptyStratum(
            f"arm {arm_ids[k]} (rule {tuple(float(x) for x in P[k])}) has no {'treated' if t else 'untreated'} "
            f"observations in cell {cells[l]}"
        )


def _pooled_arm_means(sample: ExperimentSample) -> np.ndarray:
    """``(K, 2)`` per-arm means ignoring covariate cells."""
    K = sample.n_arms
    c = np.zeros((K, 2))
    s = np.zeros((K, 2))
    np.add.at(c, (sample.arm, sample.treatment), 1)
    np.add.at(s, (sample.arm, sample.treatment), sample.outcome)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(c > 0, s / np.maximum(c, 1), np.nan)


def empirical_arm_welfare(sample: ExperimentSample, arm: int, ratio: float) -> float:
    """Estimated welfare of the fraction ``ratio`` from arm ``arm``'s records."""
    ratio = float(ratio)
    if not 0.0 <= ratio <= 1.0:
        raise ValidationError(f"ratio must lie in [0, 1], got {ratio}")
    if not 0 <= arm < sample.n_arms:
        raise ValidationError(f"arm {arm} out of range")
    m = _pooled_arm_means(sample)[arm][None, :, None]
    _check_required(m, [[ratio]], [sample.arm_ids[arm]], ["all"])
    return float(welfare_from_means(m, [[ratio]], [1.0])[0])


def mes_choose(sample: ExperimentSample, ratios) -> DecisionOutcome:
    """Choose the treatment fraction with the highest estimated welfare.

    Covariate cells in ``sample`` are ignored; each arm must have run a
    single fraction in every cell.
    """
    if not isinstance(ratios, RatioSet):
        ratios = RatioSet(tuple(ratios))
    arm_ratio = np.array([r[0] if max(r) - min(r) <= TOL else np.nan for r in sample.rules])
    arms = []
    for r in ratios:
        hits = np.flatnonzero(np.abs(arm_ratio - r) <= TOL)
        if hits.size == 0:
            raise MissingCell(f"no sampled arm ran ratio {r}")
        arms.append(int(hits[0]))
    rules = np.asarray(list(ratios))[:, None]
    m = _pooled_arm_means(sample)[arms][:, :, None]
    _check_required(m, rules, [sample.arm_ids[a] for a in arms], ["all"])
    values = welfare_from_means(m, rules, [1.0])
    counts = sample.counts().counts[arms].sum(axis=2, keepdims=True)
    est = WelfareEstimate(values, values[:, None].copy(), StratumCounts(counts), tuple((r,) for r in ratios))
    k, tie = choose_index(values)
    return DecisionOutcome(k, ratios[k], tie, est)


def cell_weights(sample: ExperimentSample, profile: PopulationProfile, use_sample_shares: bool) -> np.ndarray:
    if not use_sample_shares:
        return profile.p
    c = np.bincount(sample.cell, minlength=sample.n_cells).astype(float)
    return c / c.sum()


def estimate_grid(sample: ExperimentSample, grid: RuleGrid, use_sample_shares: bool = False) -> WelfareEstimate:
    """Estimated welfare for every rule vector in ``grid``."""
    if sample.n_cells != grid.n_cells:
        raise ValidationError(f"sample has {sample.n_cells} cells, grid has {grid.n_cells}")
    arms = _match_arms(sample, grid.matrix)
    means = sample.stratum_means()[arms]
    _check_required(means, grid.matrix, [sample.arm_ids[a] for a in arms], grid.profile.cells)
    w = cell_weights(sample, grid.profile, use_sample_shares)
    values = welfare_from_means(means, grid.matrix, w)
    P = grid.matrix
    with np.errstate(invalid="ignore"):
        cell_values = np.where(P < 1, (1 - P) * means[:, 0, :], 0.0) + np.where(P > 0, P * means[:, 1, :], 0.0)
    return WelfareEstimate(values, cell_values, StratumCounts(sample.counts().counts[arms]), grid.vectors)


def cmes_choose(sample: ExperimentSample, grid: RuleGrid, use_sample_shares: bool = False) -> DecisionOutcome:
    """Choose the per-cell rule vector with the highest estimated welfare."""
    est = estimate_grid(sample, grid, use_sample_shares)
    k, tie = choose_index(est.values)
    return DecisionOutcome(k, grid.vectors[k], tie, est)


def pair_indices(K: int) -> list[tuple[int, int]]:
    return [(k, j) for k in range(K) for j in range(k + 1, K)]


def pairwise_indicators(values) -> np.ndarray:
    """``values[..., k] > values[..., j]`` for every pair ``k < j``, as 0/1."""
    v = np.asarray(values, dtype=float)
    K = v.shape[-1]
    iu, ju = np.triu_indices(K, 1)
    return (v[..., iu] > v[..., ju]).astype(np.int8)


def vmes_vectorize(estimates) -> np.ndarray:
    """All pairwise welfare comparisons, ordered ``(0,1), (0,2), ..., (K-2,K-1)``.

    Raises ``TieError`` when two estimates are within ``TOL``; the
    comparison vector is only meaningful under a strict ordering.
    """
    v = np.asarray(estimates.values if isinstance(estimates, WelfareEstimate) else estimates, dtype=float)
    iu, ju = np.triu_indices(v.size, 1)
    close = np.abs(v[iu] - v[ju]) <= TOL
    if close.any():
        i = int(np.flatnonzero(close)[0])
        raise TieError(f"estimates for rules {iu[i]} and {ju[i]} are tied")
    return pairwise_indicators(v)


def vmes_winner(vector, K: int) -> int:
    """The rule that wins all ``K - 1`` of its comparisons."""
    vec = np.asarray(vector, dtype=int)
    if vec.size != K * (K - 1) // 2:
        raise ValidationError(f"expected {K * (K - 1) // 2} comparisons, got {vec.size}")
    wins = np.zeros(K, dtype=int)
    for (k, j), d in zip(pair_indices(K), vec):
        wins[k if d else j] += 1
    top = np.flatnonzero(wins == K - 1)
    if top.size != 1:
        raise ValidationError("comparison vector is not a strict order")
    return int(top[0])


def welfare_variance(sample: ExperimentSample, grid: RuleGrid, use_sample_shares: bool = False) -> np.ndarray:
    """Plug-in variance of each rule's welfare estimate.

    Sums within-stratum variances (denominator ``n``) weighted by squared cell
    weights times ``(1 - pi)**2 / N0`` and ``pi**2 / N1``.
    """
    arms = _match_arms(sample, grid.matrix)
    c = sample.counts().counts[arms].astype(float)
    var_ub = sample.stratum_variances()[arms]
    with np.errstate(invalid="ignore", divide="ignore"):
        var = np.where(c > 1, var_ub * (c - 1) / np.maximum(c, 1), 0.0)
        per = np.where(c > 0, var / np.maximum(c, 1), np.nan)
    P = grid.matrix
    w = cell_weights(sample, grid.profile, use_sample_shares)
    terms = np.where(P < 1, (1 - P) ** 2 * per[:, 0, :], 0.0) + np.where(P > 0, P**2 * per[:, 1, :], 0.0)
    return terms @ (w**2)


def welfare_contrast(sample: ExperimentSample, grid: RuleGrid, k: int, j: int,
                     use_sample_shares: bool = False) -> ContrastStatistic:
    """Estimated welfare of rule ``k`` minus rule ``j`` with its standard error."""
    est = estimate_grid(sample, grid, use_sample_shares)
    var = welfare_variance(sample, grid, use_sample_shares)
    return ContrastStatistic((k, j), float(est.values[k] - est.values[j]), float(np.sqrt(var[k] + var[j])))


def plugin_decision(estimate, stderr, n):
    """Vectorized threshold rule ``1{sqrt(n) * estimate / stderr > 0}``."""
    g = np.asarray(estimate, dtype=float)
    s = np.asarray(stderr, dtype=float)
    if np.any(~(s > 0)):
        raise ValidationError("studentizer must be strictly positive")
    if n < 1:
        raise ValidationError("sample size must be at least 1")
    return (np.sqrt(n) * g / s > 0).astype(np.int8)


def plugin_rule(contrast: ContrastStatistic, n: int) -> int:
    """1 when the studentized contrast is strictly positive, else 0."""
    if contrast.stderr is None:
        raise ValidationError("plug-in rule needs a studentizer")
    return int(plugin_decision(contrast.estimate, contrast.stderr, n))
