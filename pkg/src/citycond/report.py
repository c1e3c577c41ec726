"""Aggregation of run records into publication-style tables and plot-ready series."""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .backbones import KINDS
from .engine.metrics import mean_std
from .engine.results import RunResult
from .errors import SchemaMismatchError
from .layer import VARIANTS

FORMATS = ("text", "csv", "structured")
REGIME_ORDER = ("full", "lowdata", "crosscity")
EMPTY = "--"


@dataclass(frozen=True)
class Cell:
    mean: float
    std: float
    n: int

    def render(self, digits: int = 3) -> str:
        return f"{self.mean:.{digits}f} ± {self.std:.{digits}f}"


@dataclass
class AggregateRow:
    backbone: str
    variant: str
    regime: str
    setting: str  # fraction for lowdata, "src->tgt" for crosscity, "" otherwise
    seeds: tuple[int, ...]
    missing_seeds: tuple[int, ...]
    config_hashes: tuple[str, ...]
    cells: dict[str, Cell] = field(default_factory=dict)
    curves: dict[int, Cell] = field(default_factory=dict)  # adaptation curve, mean over seeds

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.backbone, self.variant, self.regime, self.setting)

    @property
    def flags(self) -> list[str]:
        out = []
        if len(self.seeds) == 1:
            out.append("n=1")
        if self.missing_seeds:
            out.append("missing seeds " + ",".join(str(s) for s in self.missing_seeds))
        return out


@dataclass
class AggregateTable:
    rows: list[AggregateRow]
    expected_seeds: tuple[int, ...]

    def row(self, backbone: str, variant: str, regime: str = "full", setting: str = "") -> AggregateRow:
        for r in self.rows:
            if r.key == (backbone, variant, regime, setting):
                return r
        raise KeyError((backbone, variant, regime, setting))

    def metrics(self) -> list[str]:
        return sorted({m for r in self.rows for m in r.cells})


def _setting(r: RunResult) -> str:
    if r.regime == "lowdata":
        return f"{r.frac:g}"
    if r.regime == "crosscity":
        return f"{r.source_city}->{r.target_city}"
    return ""


def _sort_key(key: tuple[str, str, str, str]):
    backbone, variant, regime, setting = key
    try:
        num = float(setting)
    except ValueError:
        num = 0.0
    return (KINDS.index(backbone) if backbone in KINDS else len(KINDS), backbone,
            VARIANTS.index(variant) if variant in VARIANTS else len(VARIANTS), variant,
            REGIME_ORDER.index(regime) if regime in REGIME_ORDER else len(REGIME_ORDER), num, setting)


def flatten_metrics(r: RunResult) -> dict[str, float]:
    out = {}
    for prefix, group in (("val", r.val), ("test", r.test), ("pre", r.pre), ("post", r.post)):
        for k, v in group.items():
            out[f"{prefix}_{k}"] = float(v)
    return out


def aggregate(results: Iterable[RunResult], expected_seeds: Sequence[int] | None = None) -> AggregateTable:
    """Group by (backbone, variant, regime setting); mean and sample std per metric.

    Only successful runs enter a cell. A seed expected for a group but absent
    (or failed) is listed in ``missing_seeds``; cells never silently average
    over fewer runs. ``expected_seeds`` defaults to every seed seen anywhere.
    """
    results = list(results)
    versions = {r.schema_version for r in results}
    if len(versions) > 1:
        raise SchemaMismatchError(f"results mix schema versions {sorted(versions)}")
    expected = tuple(sorted(set(expected_seeds) if expected_seeds is not None else {r.seed for r in results}))
    groups: dict[tuple, list[RunResult]] = {}
    for r in results:
        groups.setdefault((r.backbone, r.variant, r.regime, _setting(r)), []).append(r)
    rows = []
    for key in sorted(groups, key=_sort_key):
        members = sorted(groups[key], key=lambda r: (r.seed, r.config_hash))
        ok = [r for r in members if r.ok]
        seeds = tuple(sorted({r.seed for r in ok}))
        row = AggregateRow(*key, seeds=seeds, missing_seeds=tuple(s for s in expected if s not in seeds),
                           config_hashes=tuple(sorted({r.config_hash for r in members})))
        values: dict[str, list[float]] = {}
        for r in ok:
            for k, v in flatten_metrics(r).items():
                values.setdefault(k, []).append(v)
        row.cells = {k: Cell(*mean_std(v), len(v)) for k, v in sorted(values.items())}
        steps: dict[int, list[float]] = {}
        for r in ok:
            for point in r.adaptation_curve:
                if "mse" in point:
                    steps.setdefault(int(point["step"]), []).append(float(point["mse"]))
                elif "ade" in point:
                    steps.setdefault(int(point["step"]), []).append(float(point["ade"]))
        row.curves = {s: Cell(*mean_std(v), len(v)) for s, v in sorted(steps.items())}
        rows.append(row)
    return AggregateTable(rows, expected)


# ---------------------------------------------------------------- tables

@dataclass
class RenderedTable:
    title: str
    columns: list[str]
    rows: list[list[str]]
    notes: list[str] = field(default_factory=list)


def _cell(row: AggregateRow, metric: str, digits: int) -> str:
    c = row.cells.get(metric)
    return EMPTY if c is None else c.render(digits)


def _notes(rows: Iterable[AggregateRow]) -> list[str]:
    out = []
    for r in rows:
        for flag in r.flags:
            label = "/".join(p for p in (r.backbone, r.variant, r.regime, r.setting) if p)
            out.append(f"{label}: {flag}")
    return out


def forecast_table(table: AggregateTable, split: str = "val", digits: int = 3) -> RenderedTable:
    """Full-data rows: backbone, model, MSE, MAE (``--`` where a metric is absent)."""
    rows = [r for r in table.rows if r.regime == "full"]
    first, second = ("ade", "fde") if any(f"{split}_ade" in r.cells for r in rows) else ("mse", "mae")
    body = [[r.backbone, r.variant, _cell(r, f"{split}_{first}", digits), _cell(r, f"{split}_{second}", digits)]
            for r in rows]
    return RenderedTable(f"Full-data {split} error, mean ± std over seeds",
                         ["backbone", "model", first.upper(), second.upper()], body, _notes(rows))


def lowdata_table(table: AggregateTable, split: str = "val", metric: str = "mse",
                  digits: int = 1) -> RenderedTable:
    """One row per (backbone, model), one column per training fraction."""
    rows = [r for r in table.rows if r.regime == "lowdata"]
    fracs = sorted({r.setting for r in rows}, key=float)
    pairs: list[tuple[str, str]] = []
    for r in rows:
        if (r.backbone, r.variant) not in pairs:
            pairs.append((r.backbone, r.variant))
    body = []
    for bb, var in pairs:
        line = [bb, var]
        for f in fracs:
            match = [r for r in rows if (r.backbone, r.variant, r.setting) == (bb, var, f)]
            line.append(_cell(match[0], f"{split}_{metric}", digits) if match else EMPTY)
        body.append(line)
    return RenderedTable(f"Low-data {split} {metric.upper()} by training fraction, mean ± std over seeds",
                         ["backbone", "model"] + [f"{float(f):.2f}" for f in fracs], body, _notes(rows))


def transfer_table(table: AggregateTable, metric: str = "mse", digits: int = 1) -> RenderedTable:
    """Cross-city rows: train_city, test_city, model, Pre, Post (target test error)."""
    rows = [r for r in table.rows if r.regime == "crosscity"]
    body = []
    for r in rows:
        src, tgt = r.setting.split("->", 1)
        body.append([src, tgt, r.variant if len({x.backbone for x in rows}) <= 1 else f"{r.backbone}_{r.variant}",
                     _cell(r, f"pre_{metric}", digits), _cell(r, f"post_{metric}", digits)])
    return RenderedTable(f"Cross-city target test {metric.upper()} before (Pre) and after (Post) adaptation",
                         ["train_city", "test_city", "model", "Pre", "Post"], body, _notes(rows))


def standard_tables(table: AggregateTable) -> dict[str, RenderedTable]:
    out = {}
    if any(r.regime == "full" for r in table.rows):
        out["forecast"] = forecast_table(table)
    if any(r.regime == "lowdata" for r in table.rows):
        out["lowdata"] = lowdata_table(table)
    if any(r.regime == "crosscity" for r in table.rows):
        out["transfer"] = transfer_table(table)
    return out


def render_text(t: RenderedTable) -> str:
    widths = [len(c) for c in t.columns]
    for row in t.rows:
        widths = [max(w, len(v)) for w, v in zip(widths, row)]
    fmt = lambda vals: "  ".join(v.ljust(w) for v, w in zip(vals, widths)).rstrip()
    lines = [t.title, fmt(t.columns), "  ".join("-" * w for w in widths)]
    lines += [fmt(row) for row in t.rows]
    if t.notes:
        lines.append("")
        lines += [f"note: {n}" for n in t.notes]
    return "\n".join(lines) + "\n"


def parse_text_table(text: str) -> tuple[list[str], list[list[str]]]:
    """Recover header and rows from :func:`render_text` output (cells split on 2+ spaces)."""
    import re

    lines = text.splitlines()
    split = lambda s: [c for c in re.split(r" {2,}", s.strip())]
    header = split(lines[1])
    rows = []
    for line in lines[3:]:
        if not line.strip():
            break
        rows.append(split(line))
    return header, rows


# ---------------------------------------------------------------- loss-free long format

LONG_FIELDS = ["backbone", "variant", "regime", "setting", "metric", "mean", "std", "n", "seeds",
               "missing_seeds", "config_hashes"]


def long_records(table: AggregateTable) -> list[dict]:
    """One record per (group, metric); floats kept at full precision."""
    out = []
    for r in table.rows:
        for metric, c in r.cells.items():
            out.append({"backbone": r.backbone, "variant": r.variant, "regime": r.regime, "setting": r.setting,
                        "metric": metric, "mean": c.mean, "std": c.std, "n": c.n,
                        "seeds": " ".join(str(s) for s in r.seeds),
                        "missing_seeds": " ".join(str(s) for s in r.missing_seeds),
                        "config_hashes": " ".join(r.config_hashes)})
    return out


def records_to_csv(records: list[dict], fields: Sequence[str] = LONG_FIELDS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for rec in records:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in rec.items()})
    return buf.getvalue()


def csv_to_records(text: str) -> list[dict]:
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        rec = dict(rec)
        for k in ("mean", "std"):
            if k in rec:
                rec[k] = float(rec[k])
        if "n" in rec:
            rec["n"] = int(rec["n"])
        out.append(rec)
    return out


def records_to_structured(records: list[dict]) -> str:
    return json.dumps(records, indent=2, sort_keys=False) + "\n"


def structured_to_records(text: str) -> list[dict]:
    return json.loads(text)


# ---------------------------------------------------------------- plot data

def lowdata_curves(table: AggregateTable, split: str = "val", metric: str = "mse") -> list[dict]:
    """(fraction, mean, std) series per backbone and variant."""
    out = []
    for r in table.rows:
        c = r.cells.get(f"{split}_{metric}")
        if r.regime == "lowdata" and c is not None:
            out.append({"backbone": r.backbone, "variant": r.variant, "fraction": float(r.setting),
                        "mean": c.mean, "std": c.std, "n": c.n})
    return out


def adaptation_curves(table: AggregateTable) -> list[dict]:
    """(step, mean, std) target-test error per backbone, variant and direction."""
    out = []
    for r in table.rows:
        if r.regime != "crosscity":
            continue
        for step, c in r.curves.items():
            out.append({"backbone": r.backbone, "variant": r.variant, "direction": r.setting, "step": step,
                        "mean": c.mean, "std": c.std, "n": c.n})
    return out


# ---------------------------------------------------------------- attention

def _steps_per_day(config: dict) -> int | None:
    data = config.get("data", {})
    if data.get("period"):
        return int(data["period"])
    if data.get("source") == "synthetic":
        return int(data.get("synthetic", {}).get("period", 0)) or None
    return None


def time_bucket(t: int, steps_per_day: int, buckets: int) -> int:
    return int((t % steps_per_day) * buckets // steps_per_day)


def attention_report(results: Iterable[RunResult], buckets: int | None = None) -> list[dict]:
    """Mean slot attention per (backbone, city, time-of-day bucket, slot).

    Records are pooled over all runs given. Runs without a known day length
    put everything in bucket 0. No interpretation of slots is attempted.
    """
    sums: dict[tuple, np.ndarray] = {}
    counts: dict[tuple, int] = {}
    seen = False
    for r in results:
        if not r.attention:
            continue
        seen = True
        nb = buckets or int(r.config.get("time_buckets", 24))
        spd = _steps_per_day(r.config)
        for rec in r.attention:
            b = time_bucket(int(rec["t"]), spd, nb) if spd else 0
            key = (r.backbone, rec["city"], b)
            alpha = np.asarray(rec["alpha"], dtype=np.float64)
            if key in sums:
                sums[key] = sums[key] + alpha
                counts[key] += 1
            else:
                sums[key] = alpha.copy()
                counts[key] = 1
    if not seen:
        warnings.warn("no attention records found; attention summary is empty", stacklevel=2)
        return []
    out = []
    for key in sorted(sums):
        backbone, city, b = key
        mean = sums[key] / counts[key]
        for slot, v in enumerate(mean):
            out.append({"backbone": backbone, "city": city, "bucket": b, "slot": slot,
                        "mean_alpha": float(v), "records": counts[key]})
    return out


# ---------------------------------------------------------------- files

def write_report(table: AggregateTable, out_dir, fmt: str = "text", results: Sequence[RunResult] = ()) -> list[Path]:
    """Write tables and plot data for ``fmt``; returns the files written.

    Nothing time-dependent is written, so identical inputs give identical files.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown report format {fmt!r}; choose from {FORMATS}")
    if not table.rows:
        raise ValueError("nothing to report: the table is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name: str, text: str):
        p = out_dir / name
        p.write_text(text, encoding="utf-8")
        written.append(p)

    tables = standard_tables(table)
    plots = {"lowdata_curves": lowdata_curves(table), "adaptation_curves": adaptation_curves(table)}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        attn = attention_report(results) if results else []
    if attn:
        plots["attention"] = attn
    if fmt == "text":
        for name, t in tables.items():
            put(f"{name}.txt", render_text(t))
    elif fmt == "csv":
        put("aggregate.csv", records_to_csv(long_records(table)))
        for name, t in tables.items():
            put(f"{name}.csv", _table_csv(t))
        for name, recs in plots.items():
            if recs:
                put(f"{name}.csv", records_to_csv(recs, list(recs[0])))
    else:
        payload = {"aggregate": long_records(table),
                   "tables": {n: {"title": t.title, "columns": t.columns, "rows": t.rows, "notes": t.notes}
                              for n, t in tables.items()},
                   "plots": plots}
        put("report.json", json.dumps(payload, indent=2) + "\n")
    return written


def _table_csv(t: RenderedTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(t.columns)
    w.writerows(t.rows)
    return buf.getvalue()
