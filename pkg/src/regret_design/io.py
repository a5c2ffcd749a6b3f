"""File formats: sample and count CSVs, JSON configs, report serialization, fixtures."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
import tempfile
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .design import ExplicitCounts
from .errors import ValidationError
from .model import ExperimentSample, PopulationProfile, RuleGrid, StratumCounts

# ---------------------------------------------------------------------------
# serialization


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    return format(x, ".17g")


def dumps(obj, indent: int = 2) -> str:
    """JSON text with every float written at 17 significant digits."""

    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, bool) or o is None or isinstance(o, str):
            return json.dumps(o)
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            return _fmt_float(float(o))
        if isinstance(o, np.ndarray):
            return enc(o.tolist(), level)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(str(k))}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, (list, tuple)):
            if not o:
                return "[]"
            if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in o):
                return "[" + ", ".join(enc(v, level + 1) for v in o) + "]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in o) + "\n" + end + "]"
        raise TypeError(f"cannot serialize {type(o).__name__}")

    return enc(obj, 0) + "\n"


def _csv_cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return _fmt_float(float(v)).replace("null", "")
    if isinstance(v, (list, tuple)):
        return ";".join(_csv_cell(x) for x in v)
    if v is None:
        return ""
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    """CSV text for a list of flat records sharing the same keys."""
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    keys = list(rows[0])
    w.writerow(keys)
    for r in rows:
        w.writerow([_csv_cell(r.get(k)) for k in keys])
    return buf.getvalue()


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file, so readers never see a partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# sample CSV


@dataclass(frozen=True)
class SampleFile:
    sample: ExperimentSample
    cells: tuple[str, ...]
    per_cell_ratios: bool


def read_source(source) -> str:
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and os.path.exists(source)):
        try:
            return Path(source).read_text()
        except OSError as exc:
            raise ValidationError(f"cannot read {source}: {exc}") from exc
    if isinstance(source, str) and source and "\n" not in source:
        raise ValidationError(f"no such file: {source}")
    return source


def read_sample_csv(source) -> SampleFile:
    """Parse an individual-level sample.

    Columns are ``arm_id``, either ``ratio`` or one ``ratio_<cell>`` per
    covariate cell, an optional ``cell`` and then ``treatment`` and
    ``outcome``. Diagnostics name the offending line.
    """
    text = read_source(source)
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    offsets = [i + 1 for i, ln in enumerate(text.splitlines()) if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ValidationError("sample file is empty")
    reader = csv.reader(lines)
    header = [h.strip() for h in next(reader)]
    need = {"arm_id", "treatment", "outcome"}
    missing = need - set(header)
    if missing:
        raise ValidationError(f"line {offsets[0]}: header lacks {sorted(missing)}")
    ratio_cols = [h for h in header if h.startswith("ratio_")]
    single = "ratio" in header
    if single == bool(ratio_cols):
        raise ValidationError(f"line {offsets[0]}: give either a 'ratio' column or 'ratio_<cell>' columns")
    has_cell = "cell" in header
    if ratio_cols and not has_cell:
        raise ValidationError(f"line {offsets[0]}: per-cell ratios need a 'cell' column")
    cells: list[str] = [h[len("ratio_"):] for h in ratio_cols]
    idx = {h: i for i, h in enumerate(header)}

    arms: dict[str, tuple[float, ...]] = {}
    arm_first_line: dict[str, int] = {}
    recs = []
    for row, lineno in zip(reader, offsets[1:]):
        if len(row) != len(header):
            raise ValidationError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        get = lambda name: row[idx[name]].strip()
        arm = get("arm_id")
        if not arm:
            raise ValidationError(f"line {lineno}: empty arm_id")
        try:
            ratio = (float(get("ratio")),) if single else tuple(float(get(c)) for c in ratio_cols)
            y = float(get("outcome"))
        except ValueError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from exc
        if any(not 0.0 <= r <= 1.0 for r in ratio):
            raise ValidationError(f"line {lineno}: ratio outside [0, 1]")
        if not (math.isfinite(y) and 0.0 <= y <= 1.0):
            raise ValidationError(f"line {lineno}: outcome {get('outcome')} outside [0, 1]")
        t = get("treatment")
        if t not in ("0", "1"):
            raise ValidationError(f"line {lineno}: treatment must be 0 or 1, got {t!r}")
        cell = get("cell") if has_cell else "all"
        if ratio_cols and cell not in cells:
            raise ValidationError(f"line {lineno}: unknown cell {cell!r}; expected one of {cells}")
        if single and cell not in cells:
            cells.append(cell)
        if arm in arms and arms[arm] != ratio:
            raise ValidationError(
                f"line {lineno}: arm {arm} changes ratio (first set on line {arm_first_line[arm]})")
        arms.setdefault(arm, ratio)
        arm_first_line.setdefault(arm, lineno)
        recs.append((arm, cell, int(t), y))
    if not recs:
        raise ValidationError("sample file has no records")

    arm_ids = list(arms)
    L = len(cells)
    rules = [arms[a] * L if single else arms[a] for a in arm_ids]
    a_idx = {a: k for k, a in enumerate(arm_ids)}
    c_idx = {c: l for l, c in enumerate(cells)}
    sample = ExperimentSample(
        tuple(rules),
        np.array([a_idx[r[0]] for r in recs]), np.array([c_idx[r[1]] for r in recs]),
        np.array([r[2] for r in recs]), np.array([r[3] for r in recs]),
        tuple(cells), tuple(arm_ids),
    )
    return SampleFile(sample, tuple(cells), not single)


def sample_to_csv(sample: ExperimentSample) -> str:
    """Inverse of ``read_sample_csv`` for per-cell ratio files."""
    rows = []
    for i in range(len(sample)):
        k = int(sample.arm[i])
        r = {"arm_id": sample.arm_ids[k]}
        r.update({f"ratio_{c}": sample.rules[k][l] for l, c in enumerate(sample.cells)})
        r.update(cell=sample.cells[int(sample.cell[i])], treatment=int(sample.treatment[i]),
                 outcome=float(sample.outcome[i]))
        rows.append(r)
    return rows_to_csv(rows)


# ---------------------------------------------------------------------------
# stratum-count CSV

_COUNT_COL = re.compile(r"^N_(\d+)_([01])_(.+)$")


@dataclass(frozen=True)
class CountsRow:
    n: int
    counts: StratumCounts
    stored_upper: float | None = None
    stored_lower: float | None = None


@dataclass(frozen=True)
class CountsTable:
    grid: RuleGrid | None
    rows: tuple[CountsRow, ...]
    cells: tuple[str, ...]

    def policy(self) -> ExplicitCounts:
        table = {r.n: r.counts for r in self.rows}
        pub = {r.n: r.stored_upper for r in self.rows if r.stored_upper is not None}
        return ExplicitCounts(table, pub)

    def row(self, n: int) -> CountsRow:
        for r in self.rows:
            if r.n == n:
                return r
        raise KeyError(n)


def _parse_meta(lines) -> dict:
    meta = {}
    for ln in lines:
        m = re.match(r"^#\s*(rules|cells|probs)\s*:\s*(.+)$", ln.strip())
        if m:
            meta[m.group(1)] = m.group(2).strip()
    return meta


def _grid_from_meta(meta, cells) -> RuleGrid | None:
    if "rules" not in meta or "probs" not in meta:
        return None
    try:
        rules = tuple(tuple(float(x) for x in part.split(",")) for part in meta["rules"].split(";"))
        probs = tuple(float(x) for x in meta["probs"].split(","))
    except ValueError as exc:
        raise ValidationError(f"bad metadata comment: {exc}") from exc
    return RuleGrid(rules, PopulationProfile(probs, cells))


def _optional_float(row, col, name):
    if name not in col or not row[col[name]].strip():
        return None
    return float(row[col[name]])


def read_counts_csv(source, grid: RuleGrid | None = None) -> CountsTable:
    """Parse a wide stratum-count table.

    Count columns are named ``N_<k>_<t>_<cell>`` with rules numbered from 1.
    ``N`` and ``N_<k>`` totals, when present, must agree with the counts.
    ``stored_upper`` and ``stored_lower`` are optional reference
    values. A grid can be given directly or via ``# rules:``, ``# cells:``
    and ``# probs:`` comment lines.
    """
    text = read_source(source)
    all_lines = text.splitlines()
    comments = [ln for ln in all_lines if ln.lstrip().startswith("#")]
    numbered = [(i + 1, ln) for i, ln in enumerate(all_lines) if ln.strip() and not ln.lstrip().startswith("#")]
    if not numbered:
        raise ValidationError("counts file is empty")
    meta = _parse_meta(comments)
    reader = csv.reader([ln for _, ln in numbered])
    header = [h.strip() for h in next(reader)]
    columns = {}
    for i, h in enumerate(header):
        m = _COUNT_COL.match(h)
        if m:
            columns[i] = (int(m.group(1)) - 1, int(m.group(2)), m.group(3))
    if not columns:
        raise ValidationError(f"line {numbered[0][0]}: no N_<k>_<t>_<cell> columns")
    K = 1 + max(k for k, _, _ in columns.values())
    cells: list[str] = [c.strip() for c in meta["cells"].split(",")] if "cells" in meta else []
    for _, _, c in columns.values():
        if c not in cells:
            cells.append(c)
    if grid is None:
        grid = _grid_from_meta(meta, tuple(cells))
    if grid is not None and (len(grid) != K or grid.n_cells != len(cells)):
        raise ValidationError(f"counts describe {K} rules and {len(cells)} cells; grid has "
                              f"{len(grid)} and {grid.n_cells}")
    if grid is not None and tuple(grid.profile.cells) != tuple(cells):
        grid = RuleGrid(grid.vectors, PopulationProfile(grid.profile.probs, tuple(cells)))
    col = {h: i for i, h in enumerate(header)}
    rows = []
    for row, (lineno, _) in zip(reader, numbered[1:]):
        if len(row) != len(header):
            raise ValidationError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        c = np.zeros((K, 2, len(cells)), dtype=np.int64)
        try:
            for i, (k, t, cell) in columns.items():
                v = row[i].strip()
                if not re.fullmatch(r"\d+", v):
                    raise ValueError(f"count {v!r} in column {header[i]} is not a nonnegative integer")
                c[k, t, cells.index(cell)] = int(v)
            n = int(row[col["N"]]) if "N" in col else int(c.sum())
            pub_u = _optional_float(row, col, "stored_upper")
            pub_l = _optional_float(row, col, "stored_lower")
        except (ValueError, KeyError) as exc:
            raise ValidationError(f"line {lineno}: {exc}") from exc
        if n != c.sum():
            raise ValidationError(f"line {lineno}: N={n} but counts sum to {int(c.sum())}")
        for k in range(K):
            key = f"N_{k + 1}"
            if key in col and int(row[col[key]]) != c[k].sum():
                raise ValidationError(f"line {lineno}: {key}={row[col[key]]} but rule {k + 1} counts sum to {int(c[k].sum())}")
        counts = StratumCounts(c)
        if grid is not None:
            try:
                counts.check(grid)
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from exc
        rows.append(CountsRow(n, counts, pub_u, pub_l))
    return CountsTable(grid, tuple(rows), tuple(cells))


def counts_to_csv(table: CountsTable) -> str:
    """Inverse of ``read_counts_csv`` (metadata comments included when a grid is known)."""
    out = []
    if table.grid is not None:
        out.append("# rules: " + " ; ".join(",".join(format(x, "g") for x in v) for v in table.grid.vectors))
        out.append("# cells: " + ",".join(table.cells))
        out.append("# probs: " + ",".join(format(x, "g") for x in table.grid.profile.probs))
    K = table.rows[0].counts.shape[0]
    cols = [f"N_{k + 1}_{t}_{c}" for c in table.cells for k in range(K) for t in (0, 1)]
    recs = []
    for r in table.rows:
        rec = {"N": r.n}
        for c_i, c in enumerate(table.cells):
            for k in range(K):
                for t in (0, 1):
                    rec[f"N_{k + 1}_{t}_{c}"] = int(r.counts[k, t, c_i])
        rec["stored_upper"] = r.stored_upper
        rec["stored_lower"] = r.stored_lower
        recs.append({k: rec[k] for k in ["N", *cols, "stored_upper", "stored_lower"]})
    head = "".join(line + "\n" for line in out)
    return head + rows_to_csv(recs)


# ---------------------------------------------------------------------------
# bundled fixtures

FIXTURES = {"p010": "alloc_p010.csv", "p050": "alloc_p050.csv", "p090": "alloc_p090.csv", "p099": "alloc_p099.csv"}


def fixture_names() -> list[str]:
    return list(FIXTURES)


def load_fixture(name: str) -> CountsTable:
    """Stored allocations for the two-rule, two-cell design, keyed by ``p010`` .. ``p099``."""
    if name not in FIXTURES:
        raise ValidationError(f"unknown fixture {name!r}; choose from {fixture_names()}")
    text = resources.files("regret_design").joinpath("data", FIXTURES[name]).read_text()
    return read_counts_csv(text)


# ---------------------------------------------------------------------------
# JSON configs

_NUM01 = {"type": "number", "minimum": 0, "maximum": 1}
_PROFILE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["probs"],
    "properties": {
        "probs": {"type": "array", "items": _NUM01, "minItems": 1},
        "cells": {"type": "array", "items": {"type": "string"}},
    },
}
_RULES = {"type": "array", "minItems": 1, "items": {"type": "array", "items": _NUM01, "minItems": 1}}
_RATIOS = {"type": "array", "minItems": 1, "items": _NUM01}
_COUNTS = {"type": "array", "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                      "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}}}
_STATE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["exposures", "means"],
    "properties": {
        "exposures": {"type": "array", "items": _NUM01, "minItems": 1},
        "means": {"type": "array", "minItems": 2, "maxItems": 2,
                  "items": {"type": "array", "items": {"type": "array", "items": _NUM01}}},
    },
}
_SEED = {"type": "integer", "minimum": 0}

CONFIG_SCHEMAS = {
    "choose": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "profile": _PROFILE,
            "rules": _RULES,
            "ratios": _RATIOS,
            "use_sample_shares": {"type": "boolean"},
        },
    },
    "bounds": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "profile": _PROFILE,
            "rules": _RULES,
            "ratios": _RATIOS,
            "fixture": {"enum": list(FIXTURES)},
            "counts": _COUNTS,
            "welfares": {"type": "array", "items": {"type": "number"}},
            "state": _STATE,
        },
    },
    "design": {
        "type": "object",
        "additionalProperties": False,
        "required": ["ratios", "N"],
        "properties": {
            "ratios": _RATIOS,
            "N": {"type": "integer", "minimum": 1},
            "reference": {"type": "integer", "minimum": 0},
            "n_starts": {"type": "integer", "minimum": 1},
        },
    },
    "samplesize": {
        "type": "object",
        "additionalProperties": False,
        "required": ["threshold"],
        "properties": {
            "threshold": {"type": "number", "exclusiveMinimum": 0},
            "fixture": {"enum": list(FIXTURES)},
            "profile": _PROFILE,
            "rules": _RULES,
            "ratios": _RATIOS,
            "policy": {"enum": ["explicit", "rounding"]},
            "arm_shares": {"type": "array", "items": _NUM01},
            "scan": {"enum": ["policy", "integers"]},
            "n_max": {"type": "integer", "minimum": 1},
        },
    },
    "simulate": {
        "type": "object",
        "additionalProperties": False,
        "required": ["state"],
        "properties": {
            "profile": _PROFILE,
            "rules": _RULES,
            "ratios": _RATIOS,
            "state": _STATE,
            "counts": _COUNTS,
            "N": {"type": "integer", "minimum": 1},
            "arm_shares": {"type": "array", "items": _NUM01},
            "family": {"enum": ["bernoulli", "clipped_gaussian"]},
            "sd": {"type": "number", "exclusiveMinimum": 0},
            "rules_to_run": {"type": "array", "minItems": 1,
                             "items": {"oneOf": [{"enum": ["mes", "cmes", "plugin"]},
                                                 {"type": "integer", "minimum": 0}]}},
            "replications": {"type": "integer", "minimum": 1},
            "seed": _SEED,
            "verify": {"type": "boolean"},
            "use_sample_shares": {"type": "boolean"},
        },
    },
}


def validate_config(data, command: str) -> dict:
    try:
        jsonschema.validate(data, CONFIG_SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"config {where}: {exc.message}") from exc
    return data


def load_config(source, command: str) -> dict:
    """Read and schema-check a JSON config; unknown keys are rejected."""
    text = read_source(source) if source is not None else "{}\n"
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config line {exc.lineno}: {exc.msg}") from exc
    return validate_config(data, command)


def grid_from_config(cfg: dict, default_cells: tuple[str, ...] | None = None) -> RuleGrid | None:
    """Rule grid described by ``rules``/``ratios`` and ``profile`` keys, if any."""
    prof = cfg.get("profile")
    profile = None
    if prof is not None:
        profile = PopulationProfile(tuple(prof["probs"]), tuple(prof.get("cells", ())) or (default_cells or ()))
    if "rules" in cfg and "ratios" in cfg:
        raise ValidationError("config gives both 'rules' and 'ratios'")
    if "rules" in cfg:
        if profile is None and len(cfg["rules"][0]) == 1:
            profile = PopulationProfile.single()
        if profile is None:
            raise ValidationError("rule vectors with several cells need a profile")
        return RuleGrid(tuple(tuple(r) for r in cfg["rules"]), profile)
    if "ratios" in cfg:
        return RuleGrid.from_ratios(tuple(cfg["ratios"]), profile)
    return None


# ---------------------------------------------------------------------------
# report schemas

_NUM = {"type": ["number", "null"]}
_NUMS = {"type": "array", "items": _NUM}

REPORT_SCHEMAS = {
    "choose": {
        "type": "object",
        "additionalProperties": False,
        "required": ["command", "rule", "chosen_index", "chosen", "tie", "rules", "estimates", "weights"],
        "properties": {
            "command": {"const": "choose"},
            "rule": {"enum": ["mes", "cmes"]},
            "chosen_index": {"type": "integer"},
            "chosen": _NUMS,
            "tie": {"type": "boolean"},
            "rules": {"type": "array", "items": _NUMS},
            "arm_ids": {"type": "array", "items": {"type": "string"}},
            "estimates": _NUMS,
            "weights": _NUMS,
            "cells": {"type": "array", "items": {"type": "string"}},
        },
    },
    "bounds": {
        "type": "object",
        "additionalProperties": False,
        "required": ["command", "rows"],
        "properties": {
            "command": {"const": "bounds"},
            "rules": {"type": "array", "items": _NUMS},
            "probs": _NUMS,
            "rows": {"type": "array", "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["N", "uniform_regret_upper", "reference_rule"],
                "properties": {
                    "N": {"type": "integer"},
                    "uniform_regret_upper": _NUM,
                    "reference_rule": {"type": "integer"},
                    "welfare_lower": _NUM,
                    "welfare_upper": _NUM,
                    "penalty": _NUM,
                    "penalty_upper": _NUM,
                    "best_rule": {"type": ["integer", "null"]},
                    "stored_upper": _NUM,
                    "stored_lower": _NUM,
                },
            }},
        },
    },
    "design": {
        "type": "object",
        "additionalProperties": False,
        "required": ["command", "ratios", "alphas", "N", "objective", "reference"],
        "properties": {
            "command": {"const": "design"},
            "ratios": _NUMS,
            "alphas": _NUMS,
            "N": {"type": "integer"},
            "objective": _NUM,
            "uniform_regret_upper": _NUM,
            "reference": {"type": "integer"},
        },
    },
    "samplesize": {
        "type": "object",
        "additionalProperties": False,
        "required": ["command", "N", "threshold", "trace"],
        "properties": {
            "command": {"const": "samplesize"},
            "N": {"type": ["integer", "null"]},
            "threshold": _NUM,
            "scan": {"enum": ["policy", "integers"]},
            "notes": {"type": "array", "items": {"type": "string"}},
            "trace": {"type": "array", "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["N", "bound"],
                "properties": {"N": {"type": "integer"}, "bound": _NUM, "stored_upper": _NUM},
            }},
        },
    },
    "simulate": {
        "type": "object",
        "additionalProperties": False,
        "required": ["command", "seed", "replications", "family", "true_welfares", "reports"],
        "properties": {
            "command": {"const": "simulate"},
            "seed": {"type": "integer"},
            "replications": {"type": "integer"},
            "family": {"type": "string"},
            "exact_means": {"type": "boolean"},
            "true_welfares": _NUMS,
            "reports": {"type": "array", "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["rule", "welfare", "welfare_se", "regret", "regret_se", "choice_freq"],
                "properties": {
                    "rule": {"type": "string"},
                    "welfare": _NUM,
                    "welfare_se": _NUM,
                    "regret": _NUM,
                    "regret_se": _NUM,
                    "choice_freq": _NUMS,
                    "tie_rate": _NUM,
                    "failures": {"type": "integer"},
                    "welfare_lower": _NUM,
                    "welfare_upper": _NUM,
                    "uniform_bound": _NUM,
                    "bounds_ok": {"type": ["boolean", "null"]},
                    "violations": {"type": "array", "items": {"type": "string"}},
                },
            }},
        },
    },
}


def validate_report(report: dict) -> dict:
    jsonschema.validate(report, REPORT_SCHEMAS[report["command"]])
    return report
