"""Randomized saturation designs and sufficient sample sizes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.optimize import minimize

from .bounds import noise_precision, uniform_regret_cmes
from .errors import InfeasibleError, ValidationError
from .model import TOL, PopulationProfile, RatioSet, RuleGrid, StratumCounts, required_strata


@dataclass(frozen=True)
class SaturationDesign:
    """Shares ``alphas`` of the sample assigned to each treatment fraction.

    ``reference`` is the arm constrained to hold the smallest share (its
    precision plays the role of the largest one in the regret bound).
    """

    ratios: RatioSet
    alphas: tuple[float, ...]
    n_total: int
    objective: float = float("nan")
    reference: int = 0

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=float)
        if a.size != len(self.ratios):
            raise ValidationError("need one share per ratio")
        if np.any(a < 0) or abs(a.sum() - 1.0) > TOL:
            raise ValidationError("shares must be nonnegative and sum to 1")
        if self.n_total < len(self.ratios):
            raise InfeasibleError(f"N={self.n_total} is smaller than the number of ratios")

    @property
    def precisions(self) -> np.ndarray:
        return 1.0 / (np.asarray(self.alphas) * self.n_total)


def saturation_objective(alphas, n_total: float, reference: int = 0) -> float:
    """Sum over non-reference arms of ``sqrt(1/(a_ref N) + 1/(a_k N))``."""
    a = np.asarray(alphas, dtype=float)
    if np.any(a <= 0):
        return math.inf
    others = np.delete(a, reference)
    return float(np.sum(np.sqrt(1.0 / (a[reference] * n_total) + 1.0 / (others * n_total))))


def _feasible(a, reference):
    return abs(a.sum() - 1.0) <= TOL and np.all(a > 0) and np.all(a[reference] <= a)


def _repair(a, reference):
    """Push a solver iterate back onto the constraint set."""
    a = np.clip(np.asarray(a, dtype=float), 1e-12, None)
    a = a / a.sum()
    others = np.delete(np.arange(a.size), reference)
    if a[reference] > a[others].min():
        a[reference] = a[others].min()
        a = a / a.sum()
    return a


def _starts(K: int, n_starts: int) -> list[np.ndarray]:
    out = [np.full(K, 1.0 / K)]
    # fixed quasi-random interior points; the reference arm gets the smallest share
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    for s in range(1, n_starts):
        raw = np.array([(0.5 + s * phi * (k + 1)) % 1.0 for k in range(K)]) + 0.05
        raw = raw / raw.sum()
        out.append(raw)
    return out


def optimize_saturation(ratios, n_total: int, reference: int = 0, n_starts: int = 16) -> SaturationDesign:
    """Shares minimizing the state-free regret bound of a saturation design.

    Minimizes ``sum_{k != ref} sqrt(1/(a_ref N) + 1/(a_k N))`` over the
    simplex subject to ``a_ref <= a_k``, from ``n_starts`` fixed starting
    points; the lowest objective wins, earlier starts winning ties.
    """
    if not isinstance(ratios, RatioSet):
        ratios = RatioSet(tuple(ratios))
    K = len(ratios)
    if n_total < K:
        raise InfeasibleError(f"N={n_total} is smaller than the number of ratios K={K}")
    if not 0 <= reference < K:
        raise ValidationError("reference arm out of range")
    if K == 1:
        return SaturationDesign(ratios, (1.0,), int(n_total), 0.0, reference)

    others = [k for k in range(K) if k != reference]
    cons = [{"type": "eq", "fun": lambda a: a.sum() - 1.0}]
    cons += [{"type": "ineq", "fun": (lambda a, k=k: a[k] - a[reference])} for k in others]
    f = lambda a: saturation_objective(a, n_total, reference)

    best_a, best_f = None, math.inf
    for x0 in _starts(K, n_starts):
        x0 = _repair(x0, reference)
        candidates = [x0]
        res = minimize(f, x0, method="SLSQP", bounds=[(1e-9, 1.0)] * K, constraints=cons,
                       options={"ftol": 1e-14, "maxiter": 500})
        candidates.append(_repair(res.x, reference))
        for a in candidates:
            if not _feasible(a, reference):
                continue
            val = f(a)
            if val < best_f - 1e-12:
                best_a, best_f = a, val
    assert best_a is not None
    return SaturationDesign(ratios, tuple(float(x) for x in best_a), int(n_total), best_f, reference)


# ---------------------------------------------------------------------------
# stratum allocation


@dataclass(frozen=True)
class ExplicitCounts:
    """Allocation policy that looks counts up in a table keyed by total N."""

    table: Mapping[int, StratumCounts]
    stored: Mapping[int, float] = field(default_factory=dict)

    def sizes(self) -> list[int]:
        return sorted(self.table)


@dataclass(frozen=True)
class ProportionalRounding:
    """Split N by arm share, cell probability and treated fraction.

    Targets are ``N * alpha_k * p_l * pi_kl`` (treated) and
    ``N * alpha_k * p_l * (1 - pi_kl)`` (untreated); every stratum the rule
    needs gets at least one person and the rest is handed out by largest
    remainder. ``arm_shares=None`` means equal shares.
    """

    arm_shares: tuple[float, ...] | None = None


AllocationPolicy = ExplicitCounts | ProportionalRounding


def _round_allocation(n_total: int, grid: RuleGrid, shares) -> np.ndarray:
    K, L = len(grid), grid.n_cells
    a = np.full(K, 1.0 / K) if shares is None else np.asarray(shares, dtype=float)
    if a.size != K or np.any(a < 0) or abs(a.sum() - 1) > 1e-9:
        raise ValidationError("arm shares must be a probability vector over the grid")
    P = grid.matrix
    p = grid.profile.p
    target = n_total * a[:, None, None] * p[None, None, :] * np.stack([1 - P, P], axis=1)
    need = required_strata(grid) & (target > 0)
    if need.sum() > n_total:
        raise InfeasibleError(f"N={n_total} cannot fill the {int(need.sum())} required strata")
    counts = np.where(need, np.maximum(np.floor(target), 1), 0).astype(np.int64)
    extra = n_total - int(counts.sum())
    flat_t = target.ravel()
    flat_c = counts.ravel()
    if extra > 0:
        rem = np.where(need.ravel(), flat_t - flat_c, -np.inf)
        order = np.argsort(-rem, kind="stable")
        for i in range(extra):
            flat_c[order[i % order.size]] += 1
    elif extra < 0:
        # minimum-one bumps overshot; take back from the largest surpluses
        for _ in range(-extra):
            surplus = np.where(flat_c > 1, flat_c - flat_t, -np.inf)
            i = int(np.argmax(surplus))
            if not np.isfinite(surplus[i]):
                raise InfeasibleError(f"N={n_total} is too small for this grid")
            flat_c[i] -= 1
    return flat_c.reshape(K, 2, L)


def allocate_counts(n_total: int, policy, grid: RuleGrid,
                    profile: PopulationProfile | None = None) -> StratumCounts:
    """Stratum counts for total sample size ``n_total`` under ``policy``."""
    if profile is not None and profile != grid.profile:
        raise ValidationError("profile does not match the grid's profile")
    if isinstance(policy, ExplicitCounts):
        if n_total not in policy.table:
            raise InfeasibleError(f"no stored allocation for N={n_total}")
        counts = policy.table[n_total]
    elif isinstance(policy, ProportionalRounding):
        counts = StratumCounts(_round_allocation(int(n_total), grid, policy.arm_shares))
    else:
        raise ValidationError(f"unknown allocation policy {policy!r}")
    try:
        counts.check(grid)
    except ValidationError as exc:
        raise InfeasibleError(str(exc)) from exc
    return counts


@dataclass(frozen=True)
class SampleSizeSearch:
    """Outcome of a sufficient-sample-size scan.

    ``trace`` holds ``(N, bound)`` for every feasible N examined, in order.
    """

    n: int | None
    threshold: float
    trace: tuple[tuple[int, float], ...]


def _candidate_sizes(policy, grid, n_max, scan) -> Iterable[int]:
    if scan == "policy" and isinstance(policy, ExplicitCounts):
        return [n for n in policy.sizes() if n_max is None or n <= n_max]
    if n_max is None:
        if isinstance(policy, ExplicitCounts):
            n_max = max(policy.sizes())
        else:
            raise ValidationError("an integer scan needs N_max")
    start = 1
    if isinstance(policy, ExplicitCounts):
        start = min(policy.sizes())
    return range(start, int(n_max) + 1)


def sufficient_sample_size(threshold: float, policy, grid: RuleGrid,
                           profile: PopulationProfile | None = None, n_max: int | None = None,
                           scan: str = "policy") -> SampleSizeSearch:
    """Smallest N whose state-free regret bound falls strictly below ``threshold``.

    Sizes are scanned upward and exhaustively: integer rounding can make the
    bound non-monotone in N. ``scan="policy"`` visits only the sizes an
    explicit table stores; ``scan="integers"`` visits every integer up to
    ``n_max``, skipping sizes the policy cannot fill.
    """
    if not threshold > 0 or not math.isfinite(threshold):
        raise ValidationError("threshold must be a positive number")
    if scan not in ("policy", "integers"):
        raise ValidationError(f"unknown scan {scan!r}")
    trace = []
    for n in _candidate_sizes(policy, grid, n_max, scan):
        try:
            counts = allocate_counts(n, policy, grid, profile)
        except InfeasibleError:
            continue
        bound = uniform_regret_cmes(noise_precision(counts, grid), grid.profile)
        trace.append((int(n), bound))
        if bound < threshold:
            return SampleSizeSearch(int(n), float(threshold), tuple(trace))
    return SampleSizeSearch(None, float(threshold), tuple(trace))
