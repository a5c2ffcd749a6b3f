"""Monte Carlo evaluation of treatment-fraction rules.

Replications are drawn in fixed blocks of ``BLOCK`` rows. Block ``b`` uses its
own generator seeded from ``SeedSequence(seed, spawn_key=(b,))``, so any
replication can be regenerated on its own and results do not depend on how
blocks are scheduled across workers.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from .bounds import noise_precision, thm1_bounds, thm2_bounds, uniform_regret_cmes
from .design import ProportionalRounding, SaturationDesign, allocate_counts
from .errors import ValidationError
from .estimators import pairwise_indicators, plugin_decision, welfare_from_means
from .model import TOL, ExperimentSample, RuleGrid, StateOfNature, StratumCounts, grid_welfares

BLOCK = 1024
FAMILIES = ("bernoulli", "clipped_gaussian")


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("REGRET_DESIGN_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class SimulationConfig:
    state: StateOfNature
    grid: RuleGrid
    counts: StratumCounts
    family: str = "bernoulli"
    sd: float = 0.2
    replications: int = 10_000
    seed: int = 0
    use_sample_shares: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"family must be one of {FAMILIES}")
        if self.replications < 1:
            raise ValidationError("need at least one replication")
        if self.family == "clipped_gaussian" and not self.sd > 0:
            raise ValidationError("clipped_gaussian needs sd > 0")
        self.counts.check(self.grid)
        self.state.arm_means(self.grid)

    @classmethod
    def from_design(cls, state: StateOfNature, design: SaturationDesign, **kw) -> "SimulationConfig":
        grid = RuleGrid.from_ratios(design.ratios)
        counts = allocate_counts(design.n_total, ProportionalRounding(design.alphas), grid)
        return cls(state, grid, counts, **kw)

    @property
    def true_welfares(self) -> np.ndarray:
        return grid_welfares(self.grid, self.state)

    @property
    def exact_means(self) -> bool:
        """Whether outcome draws have the state's means as expectations."""
        return self.family == "bernoulli"


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block,))))


def _draw_block(cfg: SimulationConfig, block: int, keep_row: int | None = None):
    """Stratum means and plug-in variances for one block, shape ``(BLOCK, K, 2, L)``.

    With ``keep_row`` also returns the individual outcomes of that row as a
    ``{(k, t, l): array}`` mapping.
    """
    rng = _block_rng(cfg.seed, block)
    mu = cfg.state.arm_means(cfg.grid)
    n = cfg.counts.counts
    K, _, L = n.shape
    means = np.full((BLOCK, K, 2, L), np.nan)
    var = np.full((BLOCK, K, 2, L), np.nan)
    row = {}
    for k, t, l in itertools.product(range(K), range(2), range(L)):
        nn = int(n[k, t, l])
        if nn == 0:
            continue
        m = mu[k, t, l]
        if cfg.family == "bernoulli":
            s = rng.binomial(nn, m, size=BLOCK)
            mean = s / nn
            means[:, k, t, l] = mean
            var[:, k, t, l] = mean * (1.0 - mean)
            if keep_row is not None:
                # outcomes are exchangeable, so the ones are listed first
                row[(k, t, l)] = (np.arange(nn) < s[keep_row]).astype(float)
        else:
            y = np.clip(rng.normal(m, cfg.sd, size=(BLOCK, nn)), 0.0, 1.0)
            means[:, k, t, l] = y.mean(axis=1)
            var[:, k, t, l] = y.var(axis=1)
            if keep_row is not None:
                row[(k, t, l)] = y[keep_row].copy()
    return means, var, row


def simulate_sample(cfg: SimulationConfig, index: int) -> ExperimentSample:
    """The individual-level sample of replication ``index``."""
    if index < 0:
        raise ValidationError("replication index must be nonnegative")
    _, _, row = _draw_block(cfg, index // BLOCK, keep_row=index % BLOCK)
    return ExperimentSample.from_strata(cfg.grid.vectors, row, cfg.grid.profile.cells)


def _weights(cfg: SimulationConfig) -> np.ndarray:
    if not cfg.use_sample_shares:
        return cfg.grid.profile.p
    c = cfg.counts.counts.sum(axis=(0, 1)).astype(float)
    return c / c.sum()


def _studentizers(cfg: SimulationConfig, var: np.ndarray) -> np.ndarray:
    """Per-rule variance of the welfare estimate, shape ``(B, K)``."""
    P = cfg.grid.matrix
    n = np.maximum(cfg.counts.counts, 1)
    per = var / n
    terms = np.where(P < 1, (1 - P) ** 2 * per[..., 0, :], 0.0) + np.where(P > 0, P**2 * per[..., 1, :], 0.0)
    return terms @ (_weights(cfg) ** 2)


def _choose(values: np.ndarray):
    top = values >= values.max(axis=1, keepdims=True) - TOL
    return np.argmax(top, axis=1), top.sum(axis=1) > 1


def _decide(cfg: SimulationConfig, rule, means, var):
    """Chosen rule index per row, tie flags and a validity mask."""
    B = means.shape[0]
    K = len(cfg.grid)
    if isinstance(rule, (int, np.integer)) and not isinstance(rule, bool):
        if not 0 <= rule < K:
            raise ValidationError(f"fixed rule {rule} out of range")
        return np.full(B, int(rule)), np.zeros(B, bool), np.ones(B, bool)
    values = welfare_from_means(means, cfg.grid.matrix, _weights(cfg))
    valid = np.all(np.isfinite(values), axis=1)
    values = np.where(np.isfinite(values), values, -np.inf)
    if rule in ("mes", "cmes"):
        chosen, tie = _choose(values)
        return chosen, tie, valid
    if rule == "plugin":
        v = _studentizers(cfg, var)
        iu, ju = np.triu_indices(K, 1)
        se = np.sqrt(v[:, iu] + v[:, ju])
        ok = np.all(se > 0, axis=1) & valid
        dec = np.zeros((B, iu.size), dtype=np.int8)
        if ok.any():
            dec[ok] = plugin_decision(values[ok][:, iu] - values[ok][:, ju], se[ok], cfg.counts.total)
        wins = np.zeros((B, K), dtype=int)
        for p, (k, j) in enumerate(zip(iu, ju)):
            wins[:, k] += dec[:, p]
            wins[:, j] += 1 - dec[:, p]
        full = wins == K - 1
        ok &= full.sum(axis=1) == 1
        return np.argmax(full, axis=1), np.zeros(B, bool), ok
    raise ValidationError(f"unknown rule {rule!r}")


def _blocks(cfg: SimulationConfig):
    nb = -(-cfg.replications // BLOCK)
    for b in range(nb):
        yield b, min(BLOCK, cfg.replications - b * BLOCK)


def _map_blocks(cfg: SimulationConfig, fn, workers: int | None):
    workers = default_workers() if workers is None else max(1, int(workers))
    jobs = list(_blocks(cfg))
    if workers == 1:
        return [fn(b, rows) for b, rows in jobs]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(lambda job: fn(*job), jobs))


@dataclass(frozen=True)
class SimulationReport:
    rule: str
    replications: int
    failures: int
    welfare: float
    welfare_se: float
    regret: float
    regret_se: float
    choice_freq: tuple[float, ...]
    tie_rate: float
    true_welfares: tuple[float, ...]
    exact_means: bool

    @property
    def failure_rate(self) -> float:
        return self.failures / self.replications


def rule_performance(cfg: SimulationConfig, rule="cmes", workers: int | None = None) -> SimulationReport:
    """Monte Carlo expected welfare and regret of ``rule`` in ``cfg.state``.

    ``rule`` is ``"mes"``/``"cmes"`` (empirical success), ``"plugin"`` (the
    studentized pairwise rule) or an integer index for a fixed rule.
    Replications where the rule is undefined are counted as failures and
    left out of the averages.
    """
    if rule == "mes" and cfg.grid.n_cells != 1:
        raise ValidationError("the unconditional rule needs a single-cell grid; use 'cmes'")
    U = cfg.true_welfares
    K = U.size

    def work(b, rows):
        means, var, _ = _draw_block(cfg, b)
        chosen, tie, ok = _decide(cfg, rule, means[:rows], var[:rows])
        w = U[chosen[ok]]
        return (w.sum(), (w * w).sum(), int(ok.sum()), np.bincount(chosen[ok], minlength=K),
                int(tie[ok].sum()), rows - int(ok.sum()))

    parts = _map_blocks(cfg, work, workers)
    n_ok = sum(p[2] for p in parts)
    if n_ok == 0:
        raise ValidationError("rule was undefined on every replication")
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    freq = np.sum([p[3] for p in parts], axis=0) / n_ok
    mean = s1 / n_ok
    var = max(s2 / n_ok - mean * mean, 0.0) * n_ok / max(n_ok - 1, 1)
    se = math.sqrt(var / n_ok)
    # regret from frequencies: exact zero when every choice is optimal
    regret = float(freq @ (U.max() - U))
    return SimulationReport(
        rule=str(rule), replications=cfg.replications, failures=sum(p[5] for p in parts),
        welfare=mean, welfare_se=se, regret=regret, regret_se=se,
        choice_freq=tuple(float(x) for x in freq), tie_rate=sum(p[4] for p in parts) / n_ok,
        true_welfares=tuple(float(x) for x in U), exact_means=cfg.exact_means,
    )


def exact_expected_welfare(cfg: SimulationConfig, rule="cmes", max_outcomes: int = 5_000_000) -> float:
    """Expected welfare under Bernoulli outcomes by summing over all stratum totals."""
    if cfg.family != "bernoulli":
        raise ValidationError("exact evaluation needs Bernoulli outcomes")
    mu = cfg.state.arm_means(cfg.grid)
    n = cfg.counts.counts
    strata = [(k, t, l) for k, t, l in itertools.product(*map(range, n.shape)) if n[k, t, l] > 0]
    size = math.prod(int(n[s]) + 1 for s in strata)
    if size > max_outcomes:
        raise ValidationError(f"{size} outcome combinations exceed the limit {max_outcomes}")
    grids = np.meshgrid(*[np.arange(n[s] + 1) for s in strata], indexing="ij")
    prob = np.ones(size)
    means = np.full((size,) + n.shape, np.nan)
    for s, g in zip(strata, grids):
        g = g.ravel()
        prob *= binom.pmf(g, n[s], mu[s])
        means[(slice(None),) + s] = g / n[s]
    chosen, _, ok = _decide(cfg, rule, means, means * (1 - means))
    if not ok.all():
        raise ValidationError("rule is undefined on some outcomes")
    return float(prob @ cfg.true_welfares[chosen])


@dataclass(frozen=True)
class BoundCheck:
    rule: str
    welfare_lower: float
    welfare_upper: float
    welfare: float
    welfare_se: float
    uniform_bound: float
    max_regret: float
    max_regret_se: float
    sandwich_ok: bool
    uniform_ok: bool
    violations: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return self.sandwich_ok and self.uniform_ok


def verify_bounds(cfg: SimulationConfig, rule=None, state_grid=(), se_mult: float = 3.0,
                  workers: int | None = None) -> BoundCheck:
    """Check simulated welfare against the welfare sandwich and the uniform regret bound.

    The sandwich uses the single-cell bound when the grid has one cell and the
    covariate bound otherwise. ``state_grid`` adds further states whose
    simulated regrets must all respect the uniform bound.
    """
    single = cfg.grid.n_cells == 1
    rule = rule or ("mes" if single else "cmes")
    A = noise_precision(cfg.counts, cfg.grid)
    U = cfg.true_welfares
    lo, hi = thm1_bounds(U, A) if single else thm2_bounds(U, A, cfg.grid.profile)
    rep = rule_performance(cfg, rule, workers)
    violations = []
    below = rep.welfare < lo - se_mult * rep.welfare_se - 1e-12
    above = rep.welfare > hi + se_mult * rep.welfare_se + 1e-12
    if below:
        violations.append(f"welfare {rep.welfare:.6f} below lower bound {lo:.6f} (se {rep.welfare_se:.2e})")
    if above:
        violations.append(f"welfare {rep.welfare:.6f} above upper bound {hi:.6f} (se {rep.welfare_se:.2e})")
    uni = uniform_regret_cmes(A, cfg.grid.profile)
    worst, worst_se = rep.regret, rep.regret_se
    for st in state_grid:
        other = rule_performance(
            SimulationConfig(st, cfg.grid, cfg.counts, cfg.family, cfg.sd, cfg.replications, cfg.seed,
                             cfg.use_sample_shares), rule, workers)
        if other.regret > worst:
            worst, worst_se = other.regret, other.regret_se
    uniform_ok = worst <= uni + se_mult * worst_se + 1e-12
    if not uniform_ok:
        violations.append(f"regret {worst:.6f} above uniform bound {uni:.6f}")
    return BoundCheck(str(rule), lo, hi, rep.welfare, rep.welfare_se, uni, worst, worst_se,
                      not (below or above), uniform_ok,
                      tuple(violations))


@dataclass(frozen=True)
class ScaledRegretRow:
    n: int
    regret: float
    regret_se: float
    scaled_regret: float
    tie_rate: float
    vmes_agreement: float
    plugin_agreement: float
    plugin_defined: float


def local_state(grid: RuleGrid, n: int, b: float = 1.0, base: float = 0.5, direction=None) -> StateOfNature:
    """State at distance ``b / sqrt(n)`` from the all-``base`` state along ``direction``.

    ``direction`` has the state's ``(2, L, E)`` shape over the grid's sorted
    exposures; by default every mean at the last rule's exposure moves up.
    """
    from .model import unique_exposures

    expo = unique_exposures(grid.exposures)
    if direction is None:
        direction = np.zeros((2, grid.n_cells, expo.size))
        e = int(np.argmin(np.abs(expo - grid.exposures[-1])))
        direction[:, :, e] = 1.0
    means = base + np.asarray(direction, dtype=float) * b / math.sqrt(n)
    return StateOfNature(tuple(expo), means)


def scaled_regret_curve(grid: RuleGrid, n_grid, b: float = 1.0, base: float = 0.5, direction=None,
                        rule: str = "mes", replications: int = 100_000, seed: int = 0,
                        policy=None, workers: int | None = None) -> list[ScaledRegretRow]:
    """``sqrt(n)``-scaled regret along a local family of states.

    For each total sample size ``n``, the state sits ``b / sqrt(n)`` away from
    equal welfares. Alongside the regret of ``rule`` each row reports how
    often the pairwise-comparison vector's winner matches the empirical
    success choice (tie-free replications) and how often the studentized
    plug-in decisions match the pairwise comparisons (where defined).
    """
    policy = policy or ProportionalRounding()
    rows = []
    K = len(grid)
    for n in n_grid:
        counts = allocate_counts(int(n), policy, grid)
        state = local_state(grid, int(n), b, base, direction)
        cfg = SimulationConfig(state, grid, counts, replications=replications, seed=seed)
        U = cfg.true_welfares
        gaps = U.max() - U

        def work(blk, nrows, cfg=cfg, gaps=gaps):
            means, var, _ = _draw_block(cfg, blk)
            means, var = means[:nrows], var[:nrows]
            values = welfare_from_means(means, cfg.grid.matrix, _weights(cfg))
            chosen, tie, ok = _decide(cfg, rule, means, var)
            loss = gaps[chosen[ok]]
            iu, ju = np.triu_indices(K, 1)
            strict = np.all(np.abs(values[:, iu] - values[:, ju]) > TOL, axis=1)
            vm = pairwise_indicators(values[strict])
            wins = np.zeros((vm.shape[0], K), dtype=int)
            for p, (k, j) in enumerate(zip(iu, ju)):
                wins[:, k] += vm[:, p]
                wins[:, j] += 1 - vm[:, p]
            vmes_choice = np.argmax(wins == K - 1, axis=1)
            mes_choice, _ = _choose(values[strict])
            v = _studentizers(cfg, var)
            se = np.sqrt(v[:, iu] + v[:, ju])
            both = strict & np.all(se > 0, axis=1)
            agree_plug = 0
            if both.any():
                dec = plugin_decision(values[both][:, iu] - values[both][:, ju], se[both], cfg.counts.total)
                agree_plug = int(np.all(dec == pairwise_indicators(values[both]), axis=1).sum())
            return (loss.sum(), (loss * loss).sum(), int(ok.sum()), int(tie[ok].sum()),
                    int(strict.sum()), int((vmes_choice == mes_choice).sum()), int(both.sum()), agree_plug)

        parts = _map_blocks(cfg, work, workers)
        tot = [sum(p[i] for p in parts) for i in range(2, 8)]
        n_ok, ties, n_strict, agree_v, n_both, agree_p = tot
        s1 = math.fsum(p[0] for p in parts)
        s2 = math.fsum(p[1] for p in parts)
        reg = s1 / n_ok
        se = math.sqrt(max(s2 / n_ok - reg * reg, 0.0) / max(n_ok - 1, 1))
        rows.append(ScaledRegretRow(
            n=int(n), regret=reg, regret_se=se, scaled_regret=math.sqrt(n) * reg, tie_rate=ties / n_ok,
            vmes_agreement=agree_v / n_strict if n_strict else float("nan"),
            plugin_agreement=agree_p / n_both if n_both else float("nan"),
            plugin_defined=n_both / replications,
        ))
    return rows
