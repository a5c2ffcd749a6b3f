"""``regret-design`` command-line interface.

Exit codes: 0 success, 2 invalid input or config, 3 empty stratum,
4 infeasible design, 5 no sufficient sample size found. Reports are written
only once they are complete; on any error nothing is written.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import io as rio
from .bounds import noise_precision, penalty, penalty_upper, reference_rule, saturation_precision, \
    uniform_regret_cmes, uniform_regret_mes
from .design import ProportionalRounding, allocate_counts, optimize_saturation, \
    sufficient_sample_size
from .errors import EmptyStratum, InfeasibleError, MissingCell, MissingMeanError, RegretDesignError, \
    TieError, ValidationError
from .estimators import cmes_choose, mes_choose
from .model import PopulationProfile, RuleGrid, StateOfNature, StratumCounts, grid_welfares
from .montecarlo import SimulationConfig, rule_performance, verify_bounds

EXIT_OK, EXIT_INVALID, EXIT_EMPTY, EXIT_INFEASIBLE, EXIT_NO_N = 0, 2, 3, 4, 5

#: Rows whose stored bound differs from the recomputed one by more than this are flagged.
STORED_TOL = 5e-4


class NoSampleSize(RegretDesignError):
    """No scanned N brought the bound below the threshold."""


def _sample_profile(sample) -> PopulationProfile:
    c = np.bincount(sample.cell, minlength=sample.n_cells).astype(float)
    return PopulationProfile(tuple(c / c.sum()), sample.cells)


def _sample_grid(sample, cfg) -> tuple[RuleGrid, bool]:
    """Grid to decide over and whether cell weights come from the sample."""
    grid = rio.grid_from_config(cfg, sample.cells)
    if grid is not None:
        if grid.n_cells != sample.n_cells:
            raise ValidationError(f"config grid has {grid.n_cells} cells, sample has {sample.n_cells}")
        if tuple(grid.profile.cells) != tuple(sample.cells):
            grid = RuleGrid(grid.vectors, PopulationProfile(grid.profile.probs, sample.cells))
        return grid, bool(cfg.get("use_sample_shares", False))
    unique = tuple(dict.fromkeys(sample.rules))
    if "profile" in cfg:
        prof = PopulationProfile(tuple(cfg["profile"]["probs"]), sample.cells)
        return RuleGrid(unique, prof), bool(cfg.get("use_sample_shares", False))
    return RuleGrid(unique, _sample_profile(sample)), True


def cmd_choose(args, cfg) -> tuple[dict, list[dict], str]:
    if not args.input:
        raise ValidationError("choose needs --input SAMPLE.csv")
    sample = rio.read_sample_csv(args.input).sample
    grid, use_shares = _sample_grid(sample, cfg)
    scalar = grid.n_cells == 1
    if scalar:
        order = np.argsort(grid.matrix[:, 0], kind="stable")
        ratios = tuple(float(grid.matrix[k, 0]) for k in order)
        out = mes_choose(sample, ratios)
        k = int(order[out.chosen_index])
        values = np.empty(len(grid))
        values[order] = out.estimates.values
        weights, rule, tie = [1.0], "mes", out.tie
    else:
        out = cmes_choose(sample, grid, use_shares)
        k, values, tie, rule = out.chosen_index, out.estimates.values, out.tie, "cmes"
        c = np.bincount(sample.cell, minlength=sample.n_cells)
        weights = (c / c.sum()).tolist() if use_shares else list(grid.profile.probs)
    arm_ids = []
    for v in grid.vectors:
        hit = [sample.arm_ids[a] for a, r in enumerate(sample.rules) if np.allclose(r, v, atol=1e-12, rtol=0)]
        arm_ids.append(hit[0] if hit else "")
    report = {
        "command": "choose", "rule": rule, "chosen_index": int(k), "chosen": list(grid.vectors[k]),
        "tie": bool(tie), "rules": [list(v) for v in grid.vectors], "arm_ids": arm_ids,
        "estimates": [float(x) for x in values], "weights": [float(w) for w in weights],
        "cells": list(grid.profile.cells),
    }
    rows = [{"index": i, "arm_id": arm_ids[i], "rule": list(v), "estimate": float(values[i]), "chosen": i == k}
            for i, v in enumerate(grid.vectors)]
    summary = f"{rule}: chose rule {k} {tuple(grid.vectors[k])}" + (" (tie broken to lowest index)" if tie else "")
    return report, rows, summary


def _counts_source(args, cfg):
    """Counts table and grid from --input, --fixture or the config."""
    fixture = args.fixture or cfg.get("fixture")
    grid = rio.grid_from_config(cfg)
    if fixture and args.input:
        raise ValidationError("give either a fixture or --input, not both")
    if fixture:
        table = rio.load_fixture(fixture)
        if grid is not None:
            table = rio.read_counts_csv(rio.counts_to_csv(table), grid)
        return table
    if args.input:
        text = rio.read_source(args.input)
        header = next((ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")), "")
        if "outcome" in header.split(","):
            sample = rio.read_sample_csv(text).sample
            sgrid, _ = _sample_grid(sample, cfg)
            arms = [next(a for a, r in enumerate(sample.rules) if np.allclose(r, v, atol=1e-12, rtol=0))
                    for v in sgrid.vectors]
            counts = StratumCounts(sample.counts().counts[arms])
            try:
                counts.check(sgrid)
            except ValidationError as exc:
                raise EmptyStratum(str(exc)) from exc
            return rio.CountsTable(sgrid, (rio.CountsRow(counts.total, counts),), sgrid.profile.cells)
        return rio.read_counts_csv(text, grid)
    if "counts" in cfg:
        if grid is None:
            raise ValidationError("config counts need 'rules' or 'ratios'")
        counts = StratumCounts(np.asarray(cfg["counts"]))
        try:
            counts.check(grid)
        except ValidationError as exc:
            raise EmptyStratum(str(exc)) from exc
        return rio.CountsTable(grid, (rio.CountsRow(counts.total, counts),), grid.profile.cells)
    raise ValidationError("no counts given: use --input, --fixture or a config 'counts' entry")


def cmd_bounds(args, cfg):
    table = _counts_source(args, cfg)
    grid = table.grid
    if grid is None:
        raise ValidationError("counts file has no rule metadata; pass 'rules' and 'profile' in --config")
    U = None
    if "welfares" in cfg and "state" in cfg:
        raise ValidationError("give either 'welfares' or 'state'")
    if "welfares" in cfg:
        U = np.asarray(cfg["welfares"], dtype=float)
        if U.size != len(grid):
            raise ValidationError(f"need {len(grid)} welfare values, got {U.size}")
    elif "state" in cfg:
        st = cfg["state"]
        U = grid_welfares(grid, StateOfNature(tuple(st["exposures"]), np.asarray(st["means"], dtype=float)))
    rows = []
    for r in table.rows:
        A = noise_precision(r.counts, grid)
        row = {"N": r.n, "uniform_regret_upper": uniform_regret_cmes(A, grid.profile),
               "reference_rule": reference_rule(A, grid.profile)}
        if U is not None:
            D, best = penalty(U, A, grid.profile)
            row.update(welfare_lower=float(U[best] - D), welfare_upper=float(U[best]), penalty=D,
                       penalty_upper=penalty_upper(A, best, grid.profile), best_rule=best)
        row.update(stored_upper=r.stored_upper, stored_lower=r.stored_lower)
        rows.append(row)
    report = {"command": "bounds", "rules": [list(v) for v in grid.vectors], "probs": list(grid.profile.probs),
              "rows": rows}
    summary = "\n".join(f"N={r['N']:>6}  uniform regret bound {r['uniform_regret_upper']:.5f}" for r in rows)
    return report, rows, summary


def cmd_design(args, cfg):
    design = optimize_saturation(tuple(cfg["ratios"]), cfg["N"], cfg.get("reference", 0), cfg.get("n_starts", 16))
    uni = uniform_regret_mes(saturation_precision(design.alphas, design.n_total))
    report = {"command": "design", "ratios": list(design.ratios), "alphas": list(design.alphas),
              "N": design.n_total, "objective": design.objective, "uniform_regret_upper": uni,
              "reference": design.reference}
    rows = [{"ratio": r, "alpha": a, "reference": k == design.reference}
            for k, (r, a) in enumerate(zip(design.ratios, design.alphas))]
    summary = "shares " + ", ".join(f"{r:g}: {a:.5f}" for r, a in zip(design.ratios, design.alphas))
    return report, rows, summary


def cmd_samplesize(args, cfg):
    scan = cfg.get("scan", "policy")
    notes = []
    stored = {}
    if args.fixture or cfg.get("fixture") or args.input:
        table = _counts_source(args, cfg)
        grid = table.grid
        if grid is None:
            raise ValidationError("counts file has no rule metadata; pass 'rules' and 'profile' in --config")
        policy = table.policy()
        stored = {r.n: r.stored_upper for r in table.rows}
        if cfg.get("policy") == "rounding":
            policy = ProportionalRounding(tuple(cfg["arm_shares"]) if "arm_shares" in cfg else None)
    else:
        grid = rio.grid_from_config(cfg)
        if grid is None:
            raise ValidationError("samplesize needs a fixture, --input counts or a rule grid in the config")
        if cfg.get("policy", "rounding") != "rounding":
            raise ValidationError("explicit policy needs a counts table")
        policy = ProportionalRounding(tuple(cfg["arm_shares"]) if "arm_shares" in cfg else None)
        scan = cfg.get("scan", "integers")
    res = sufficient_sample_size(cfg["threshold"], policy, grid, n_max=cfg.get("n_max"), scan=scan)
    trace = []
    for n, b in res.trace:
        rec = {"N": n, "bound": b}
        if stored.get(n) is not None:
            rec["stored_upper"] = stored[n]
            if abs(stored[n] - b) > STORED_TOL:
                notes.append(f"N={n}: recomputed bound {b:.5f} differs from stored value {stored[n]:.5f}")
        trace.append(rec)
    if res.n is None:
        last = f" (last bound {res.trace[-1][1]:.5f} at N={res.trace[-1][0]})" if res.trace else ""
        raise NoSampleSize(f"no scanned N brings the bound below {cfg['threshold']}{last}")
    report = {"command": "samplesize", "N": res.n, "threshold": res.threshold, "scan": scan,
              "notes": notes, "trace": trace}
    summary = "\n".join([f"sufficient N = {res.n} (bound below {res.threshold:g})"] + [f"note: {n}" for n in notes])
    return report, trace, summary


def cmd_simulate(args, cfg):
    grid = rio.grid_from_config(cfg)
    if grid is None:
        raise ValidationError("simulate needs 'rules' or 'ratios'")
    st = cfg["state"]
    state = StateOfNature(tuple(st["exposures"]), np.asarray(st["means"], dtype=float))
    if "counts" in cfg and "N" in cfg:
        raise ValidationError("give either 'counts' or 'N'")
    if "counts" in cfg:
        counts = StratumCounts(np.asarray(cfg["counts"]))
        try:
            counts.check(grid)
        except ValidationError as exc:
            raise EmptyStratum(str(exc)) from exc
    elif "N" in cfg:
        shares = tuple(cfg["arm_shares"]) if "arm_shares" in cfg else None
        counts = allocate_counts(cfg["N"], ProportionalRounding(shares), grid)
    else:
        raise ValidationError("simulate needs 'counts' or 'N'")
    reps = args.reps if args.reps is not None else cfg.get("replications", 10_000)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    sim = SimulationConfig(state, grid, counts, cfg.get("family", "bernoulli"), cfg.get("sd", 0.2), reps, seed,
                           cfg.get("use_sample_shares", False))
    rules = cfg.get("rules_to_run", ["mes" if grid.n_cells == 1 else "cmes"])
    reports = []
    for rule in rules:
        rep = rule_performance(sim, rule)
        rec = {"rule": str(rule), "welfare": rep.welfare, "welfare_se": rep.welfare_se, "regret": rep.regret,
               "regret_se": rep.regret_se, "choice_freq": list(rep.choice_freq), "tie_rate": rep.tie_rate,
               "failures": rep.failures}
        if cfg.get("verify") and rule in ("mes", "cmes"):
            chk = verify_bounds(sim, rule)
            rec.update(welfare_lower=chk.welfare_lower, welfare_upper=chk.welfare_upper,
                       uniform_bound=chk.uniform_bound, bounds_ok=chk.passed, violations=list(chk.violations))
        reports.append(rec)
    report = {"command": "simulate", "seed": seed, "replications": reps, "family": sim.family,
              "exact_means": sim.exact_means, "true_welfares": [float(u) for u in sim.true_welfares],
              "reports": reports}
    summary = "\n".join(f"{r['rule']}: welfare {r['welfare']:.5f} (se {r['welfare_se']:.5f}), "
                        f"regret {r['regret']:.5f}" for r in reports)
    return report, reports, summary


COMMANDS = {"choose": cmd_choose, "bounds": cmd_bounds, "design": cmd_design, "samplesize": cmd_samplesize,
            "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regret-design",
                                     description="Treatment-fraction choice, regret bounds and experiment design.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "choose": "pick a treatment fraction (or per-cell vector) from sample data",
        "bounds": "welfare and uniform regret bounds for stratum counts",
        "design": "optimal arm shares for a randomized saturation design",
        "samplesize": "smallest N whose regret bound falls below a threshold",
        "simulate": "Monte Carlo welfare and regret of decision rules",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--input", help="sample CSV or stratum-count CSV")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--output", help="write the report here instead of stdout")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--seed", type=int, help="master seed (simulate)")
        p.add_argument("--reps", type=int, help="replications (simulate)")
        if name in ("bounds", "samplesize"):
            p.add_argument("--fixture", choices=rio.fixture_names(), help="use a bundled allocation table")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.reps is not None and args.reps < 1:
            raise ValidationError("--reps must be at least 1")
        if args.seed is not None and args.seed < 0:
            raise ValidationError("--seed must be nonnegative")
        cfg = rio.load_config(args.config, args.command)
        report, rows, summary = COMMANDS[args.command](args, cfg)
        rio.validate_report(report)
        text = rio.dumps(report) if args.format == "json" else rio.rows_to_csv(rows)
        if args.output:
            rio.atomic_write(args.output, text)
            print(summary)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    except EmptyStratum as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NoSampleSize as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_N
    except (ValidationError, MissingMeanError, MissingCell, TieError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
