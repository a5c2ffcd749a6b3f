"""Domain types and population-side welfare and regret.

A treatment rule here is a *fraction* of people to treat (or, with covariate
cells, a vector of per-cell fractions). Outcomes are normalized to [0, 1] and
a state of nature is represented by its table of mean potential outcomes,
indexed by treatment, covariate cell and exposure (the population-weighted
treated share).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import MissingMeanError, ValidationError

#: Tolerance used when matching exposure values and comparing estimates.
TOL = 1e-12


def _as_float_tuple(values, name):
    try:
        out = tuple(float(v) for v in values)
    except TypeError as exc:
        raise ValidationError(f"{name} must be a sequence of numbers") from exc
    if any(not np.isfinite(v) for v in out):
        raise ValidationError(f"{name} contains non-finite values")
    return out


@dataclass(frozen=True)
class RatioSet:
    """Finite, strictly increasing set of treatment fractions in [0, 1]."""

    ratios: tuple[float, ...]

    def __post_init__(self):
        r = _as_float_tuple(self.ratios, "ratios")
        if len(r) == 0:
            raise ValidationError("a ratio set needs at least one ratio")
        if any(v < 0.0 or v > 1.0 for v in r):
            raise ValidationError(f"ratios must lie in [0, 1], got {r}")
        if any(b <= a for a, b in zip(r, r[1:])):
            raise ValidationError(f"ratios must be strictly increasing, got {r}")
        object.__setattr__(self, "ratios", r)

    def __len__(self):
        return len(self.ratios)

    def __iter__(self):
        return iter(self.ratios)

    def __getitem__(self, k):
        return self.ratios[k]


@dataclass(frozen=True)
class PopulationProfile:
    """Covariate cells and their population probabilities."""

    probs: tuple[float, ...]
    cells: tuple[str, ...] = ()

    def __post_init__(self):
        p = _as_float_tuple(self.probs, "probs")
        if len(p) == 0:
            raise ValidationError("a profile needs at least one cell")
        if any(v < 0 for v in p):
            raise ValidationError(f"cell probabilities must be nonnegative, got {p}")
        if abs(sum(p) - 1.0) > TOL:
            raise ValidationError(f"cell probabilities must sum to 1, got sum {sum(p)!r}")
        cells = tuple(str(c) for c in self.cells) or tuple(f"x{l + 1}" for l in range(len(p)))
        if len(cells) != len(p):
            raise ValidationError("cells and probs differ in length")
        if len(set(cells)) != len(cells):
            raise ValidationError(f"cell labels must be distinct, got {cells}")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def single(cls, label="all"):
        return cls((1.0,), (label,))

    def __len__(self):
        return len(self.probs)

    @property
    def p(self) -> np.ndarray:
        return np.asarray(self.probs)


@dataclass(frozen=True)
class RuleGrid:
    """The finite set of candidate rule vectors over a population profile.

    ``vectors[k][l]`` is the fraction treated in cell ``l`` under rule ``k``.
    """

    vectors: tuple[tuple[float, ...], ...]
    profile: PopulationProfile = field(default_factory=PopulationProfile.single)

    def __post_init__(self):
        vecs = tuple(_as_float_tuple(v, "rule vector") for v in self.vectors)
        if len(vecs) == 0:
            raise ValidationError("a rule grid needs at least one vector")
        L = len(self.profile)
        for v in vecs:
            if len(v) != L:
                raise ValidationError(f"rule vector {v} has {len(v)} components, profile has {L} cells")
            if any(c < 0.0 or c > 1.0 for c in v):
                raise ValidationError(f"rule components must lie in [0, 1], got {v}")
        if len(set(vecs)) != len(vecs):
            raise ValidationError("rule vectors must be distinct")
        object.__setattr__(self, "vectors", vecs)
        expo = self.exposures
        if np.any(expo < -TOL) or np.any(expo > 1 + TOL):
            raise ValidationError("rule exposures must lie in [0, 1]")

    @classmethod
    def from_ratios(cls, ratios, profile: PopulationProfile | None = None):
        """One rule per ratio, applied uniformly to every cell."""
        if not isinstance(ratios, RatioSet):
            ratios = RatioSet(tuple(ratios))
        profile = profile or PopulationProfile.single()
        return cls(tuple((r,) * len(profile) for r in ratios), profile)

    @classmethod
    def product(cls, ratios, profile: PopulationProfile):
        """All ``K**L`` combinations of per-cell ratios."""
        if not isinstance(ratios, RatioSet):
            ratios = RatioSet(tuple(ratios))
        return cls(tuple(itertools.product(ratios, repeat=len(profile))), profile)

    def __len__(self):
        return len(self.vectors)

    @property
    def n_cells(self) -> int:
        return len(self.profile)

    @property
    def matrix(self) -> np.ndarray:
        """Rules as a ``(K, L)`` array."""
        return np.asarray(self.vectors, dtype=float)

    @property
    def exposures(self) -> np.ndarray:
        return self.matrix @ self.profile.p

    def index_of(self, vector) -> int:
        v = np.asarray(vector, dtype=float)
        for k, row in enumerate(self.matrix):
            if row.shape == v.shape and np.all(np.abs(row - v) <= TOL):
                return k
        raise KeyError(f"rule {tuple(v)} not in grid")


def unique_exposures(values, tol=TOL) -> np.ndarray:
    """Sorted exposure values with near-duplicates (within ``tol``) merged."""
    out: list[float] = []
    for v in sorted(float(x) for x in values):
        if not out or v - out[-1] > tol:
            out.append(v)
    return np.asarray(out)


def _find(exposures: np.ndarray, value: float):
    hits = np.flatnonzero(np.abs(exposures - value) <= TOL)
    return int(hits[0]) if hits.size else None


@dataclass(frozen=True)
class StateOfNature:
    """Mean potential outcomes ``means[t, l, e]`` at exposure ``exposures[e]``.

    Two rules with the same exposure share means; interaction enters only
    through the treated share.
    """

    exposures: tuple[float, ...]
    means: np.ndarray

    def __post_init__(self):
        ex = _as_float_tuple(self.exposures, "exposures")
        m = np.array(self.means, dtype=float)
        if m.ndim == 2:
            m = m[:, None, :]
        if m.ndim != 3 or m.shape[0] != 2 or m.shape[2] != len(ex):
            raise ValidationError(f"means must have shape (2, L, {len(ex)}), got {m.shape}")
        if not np.all(np.isfinite(m)) or np.any(m < 0) or np.any(m > 1):
            raise ValidationError("every mean outcome must lie in [0, 1]")
        arr = np.asarray(ex)
        if np.any(np.diff(np.sort(arr)) <= TOL):
            raise ValidationError("exposure values must be distinct")
        m.setflags(write=False)
        object.__setattr__(self, "exposures", ex)
        object.__setattr__(self, "means", m)

    @classmethod
    def from_mapping(cls, table: Mapping[tuple[int, int, float], float], n_cells: int | None = None):
        """Build from ``{(t, l, exposure): mean}``; every key combination must be present."""
        expo = unique_exposures(e for _, _, e in table)
        L = n_cells if n_cells is not None else 1 + max(l for _, l, _ in table)
        means = np.full((2, L, len(expo)), np.nan)
        for (t, l, e), v in table.items():
            means[int(t), int(l), _find(expo, e)] = v
        if np.isnan(means).any():
            raise ValidationError("mapping does not define every (t, l, exposure) combination")
        return cls(tuple(expo), means)

    @classmethod
    def constant(cls, value: float, exposures, n_cells: int = 1):
        expo = unique_exposures(exposures)
        return cls(tuple(expo), np.full((2, n_cells, len(expo)), float(value)))

    @property
    def n_cells(self) -> int:
        return self.means.shape[1]

    def exposure_index(self, exposure: float) -> int:
        e = _find(np.asarray(self.exposures), float(exposure))
        if e is None:
            raise MissingMeanError(f"state has no means at exposure {exposure!r}")
        return e

    def mean(self, t: int, cell: int, exposure: float) -> float:
        if cell < 0 or cell >= self.n_cells:
            raise MissingMeanError(f"state has no cell {cell}")
        return float(self.means[int(t), cell, self.exposure_index(exposure)])

    def arm_means(self, grid: RuleGrid) -> np.ndarray:
        """Means laid out per rule as a ``(K, 2, L)`` array."""
        if grid.n_cells != self.n_cells:
            raise ValidationError("grid and state disagree on the number of cells")
        idx = [self.exposure_index(e) for e in grid.exposures]
        return np.transpose(self.means[:, :, idx], (2, 0, 1))

    def scaled(self, factor: float) -> "StateOfNature":
        return StateOfNature(self.exposures, self.means * factor)


@dataclass(frozen=True)
class StratumCounts:
    """Sample sizes ``counts[k, t, l]`` per rule, treatment and cell."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts)
        if c.ndim == 2:
            c = c[:, :, None]
        if c.ndim != 3 or c.shape[1] != 2:
            raise ValidationError(f"counts must have shape (K, 2, L), got {c.shape}")
        if not np.all(np.equal(np.mod(c, 1), 0)) or np.any(c < 0):
            raise ValidationError("counts must be nonnegative integers")
        c = c.astype(np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def shape(self):
        return self.counts.shape

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __getitem__(self, key):
        return self.counts[key]

    def check(self, grid: RuleGrid) -> None:
        """Raise if a stratum that the rule needs is empty."""
        K, L = len(grid), grid.n_cells
        if self.counts.shape != (K, 2, L):
            raise ValidationError(f"counts shape {self.counts.shape} does not match grid ({K}, 2, {L})")
        need = required_strata(grid)
        bad = np.argwhere(need & (self.counts == 0))
        if bad.size:
            k, t, l = bad[0]
            raise ValidationError(
                f"stratum (rule {k}, treatment {t}, cell {l}) is empty but rule {grid.vectors[k]} needs it"
            )

    def __eq__(self, other):
        return isinstance(other, StratumCounts) and np.array_equal(self.counts, other.counts)

    def __hash__(self):
        return hash(self.counts.tobytes())


def required_strata(grid: RuleGrid) -> np.ndarray:
    """Boolean ``(K, 2, L)`` mask of strata that enter the welfare estimate."""
    P = grid.matrix
    return np.stack([P < 1.0, P > 0.0], axis=1)


@dataclass(frozen=True)
class ExperimentSample:
    """Individual ``(treatment, outcome)`` records from a saturation experiment.

    Record ``i`` belongs to arm ``arm[i]`` (the arm ran rule ``rules[arm[i]]``)
    and covariate cell ``cell[i]``.
    """

    rules: tuple[tuple[float, ...], ...]
    arm: np.ndarray
    cell: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    cells: tuple[str, ...] = ()
    arm_ids: tuple[str, ...] = ()

    def __post_init__(self):
        rules = tuple(_as_float_tuple(r, "arm rule") for r in self.rules)
        if not rules:
            raise ValidationError("a sample needs at least one arm")
        L = len(rules[0])
        if any(len(r) != L for r in rules):
            raise ValidationError("every arm rule must have the same number of cells")
        arrays = {}
        for name, dtype in (("arm", np.int64), ("cell", np.int64), ("treatment", np.int64), ("outcome", float)):
            a = np.array(getattr(self, name), dtype=dtype).ravel()
            a.setflags(write=False)
            arrays[name] = a
        n = {a.size for a in arrays.values()}
        if len(n) != 1:
            raise ValidationError("record arrays differ in length")
        y, t = arrays["outcome"], arrays["treatment"]
        if not np.all(np.isfinite(y)) or np.any(y < 0) or np.any(y > 1):
            bad = int(np.flatnonzero(~((y >= 0) & (y <= 1)))[0])
            raise ValidationError(f"record {bad}: outcome {y[bad]!r} outside [0, 1]")
        if np.any((t != 0) & (t != 1)):
            raise ValidationError("treatment must be 0 or 1")
        if np.any(arrays["arm"] < 0) or np.any(arrays["arm"] >= len(rules)):
            raise ValidationError("arm index out of range")
        if np.any(arrays["cell"] < 0) or np.any(arrays["cell"] >= L):
            raise ValidationError("cell index out of range")
        cells = tuple(self.cells) or tuple(f"x{l + 1}" for l in range(L))
        arm_ids = tuple(str(a) for a in self.arm_ids) or tuple(str(k + 1) for k in range(len(rules)))
        if len(cells) != L or len(arm_ids) != len(rules):
            raise ValidationError("label lengths do not match rules")
        object.__setattr__(self, "rules", rules)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "arm_ids", arm_ids)
        for name, a in arrays.items():
            object.__setattr__(self, name, a)

    @classmethod
    def from_strata(cls, rules, strata: Mapping[tuple[int, int, int], Sequence[float]], cells=()):
        """Build from ``{(arm, t, cell): [outcomes...]}``."""
        arm, cell, t, y = [], [], [], []
        for (k, tt, l), ys in strata.items():
            for v in ys:
                arm.append(k)
                t.append(tt)
                cell.append(l)
                y.append(v)
        return cls(tuple(rules), np.array(arm, dtype=np.int64), np.array(cell, dtype=np.int64),
                   np.array(t, dtype=np.int64), np.array(y, dtype=float), cells)

    @property
    def n_arms(self) -> int:
        return len(self.rules)

    @property
    def n_cells(self) -> int:
        return len(self.rules[0])

    def __len__(self):
        return int(self.outcome.size)

    def counts(self) -> StratumCounts:
        c = np.zeros((self.n_arms, 2, self.n_cells), dtype=np.int64)
        np.add.at(c, (self.arm, self.treatment, self.cell), 1)
        return StratumCounts(c)

    def stratum_sums(self) -> np.ndarray:
        s = np.zeros((self.n_arms, 2, self.n_cells))
        np.add.at(s, (self.arm, self.treatment, self.cell), self.outcome)
        return s

    def stratum_means(self) -> np.ndarray:
        """``(K, 2, L)`` sample means; NaN where a stratum is empty."""
        c = self.counts().counts
        s = self.stratum_sums()
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(c > 0, s / np.maximum(c, 1), np.nan)

    def stratum_variances(self) -> np.ndarray:
        """Unbiased within-stratum variances; NaN below two observations."""
        c = self.counts().counts
        m = self.stratum_means()
        dev = self.outcome - m[self.arm, self.treatment, self.cell]
        ss = np.zeros_like(m)
        np.add.at(ss, (self.arm, self.treatment, self.cell), dev**2)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(c > 1, ss / np.maximum(c - 1, 1), np.nan)

    def pooled(self) -> "ExperimentSample":
        """Same records with covariate cells merged (one cell per arm)."""
        rules = []
        for r in self.rules:
            if max(r) - min(r) > TOL:
                raise ValidationError("cannot pool cells of an arm whose rule varies by cell")
            rules.append((r[0],))
        return ExperimentSample(tuple(rules), self.arm, np.zeros_like(self.cell), self.treatment,
                                self.outcome, ("all",), self.arm_ids)


# ---------------------------------------------------------------------------
# population welfare and regret


def population_welfare(pi: float, theta: StateOfNature, cell: int | None = None) -> float:
    """Expected outcome when a fraction ``pi`` is treated.

    With ``cell`` given, returns the welfare of that covariate cell at
    exposure ``pi``; otherwise ``theta`` must describe a single cell.
    """
    pi = float(pi)
    if not 0.0 <= pi <= 1.0:
        raise ValidationError(f"ratio must lie in [0, 1], got {pi}")
    if cell is None:
        if theta.n_cells != 1:
            raise ValidationError("state has several cells; pass `cell` or use grid_welfare")
        cell = 0
    y0 = theta.mean(0, cell, pi)
    y1 = theta.mean(1, cell, pi)
    return (1.0 - pi) * y0 + pi * y1


def grid_welfare(pi_vec, theta: StateOfNature, profile: PopulationProfile) -> float:
    """Population welfare of a per-cell rule vector."""
    v = np.asarray(pi_vec, dtype=float).ravel()
    p = profile.p
    if v.size != p.size:
        raise ValidationError("rule vector length does not match profile")
    if theta.n_cells != p.size:
        raise ValidationError("state and profile disagree on the number of cells")
    expo = float(v @ p)
    e = theta.exposure_index(expo)
    y0 = theta.means[0, :, e]
    y1 = theta.means[1, :, e]
    return float(np.sum(p * ((1.0 - v) * y0 + v * y1)))


def grid_welfares(grid: RuleGrid, theta: StateOfNature) -> np.ndarray:
    """Welfare of every rule in ``grid``, shape ``(K,)``."""
    m = theta.arm_means(grid)
    P = grid.matrix
    return ((1.0 - P) * m[:, 0, :] + P * m[:, 1, :]) @ grid.profile.p


def oracle_regret(choice_distribution, theta: StateOfNature, grid: RuleGrid) -> float:
    """Best attainable welfare minus the welfare of a randomized choice.

    ``choice_distribution`` is either a length-``K`` probability vector or a
    mapping from rule index to probability.
    """
    K = len(grid)
    if isinstance(choice_distribution, Mapping):
        probs = np.zeros(K)
        for k, v in choice_distribution.items():
            if not 0 <= int(k) < K:
                raise ValidationError(f"rule index {k} out of range")
            probs[int(k)] += float(v)
    else:
        probs = np.asarray(choice_distribution, dtype=float).ravel()
        if probs.size != K:
            raise ValidationError(f"expected {K} probabilities, got {probs.size}")
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ValidationError("choice probabilities must be nonnegative and sum to 1")
    U = grid_welfares(grid, theta)
    # summing per-rule shortfalls keeps the result exactly 0 on argmax support
    return float(probs @ (U.max() - U))
