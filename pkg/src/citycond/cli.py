"""Command-line interface.

Exit codes: 0 success, 2 configuration or usage error, 3 data error,
4 run failure (a run raised, diverged or failed inside a matrix).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from .data import generate_synthetic, generate_synthetic_trajectories, write_adjacency, write_csv, write_ground_truth
from .engine import (DEFAULT_SEEDS, ExperimentConfig, ResultSink, build_model, dump_config, evaluate_split, expand_matrix,
                     load_config, prepare_dataset, read_results, run_matrix, write_results)
from .engine.crosscity import run_crosscity_model
from .engine.train import train_model
from .errors import ConfigError, ContractError, DataError, SchemaMismatchError
from .report import FORMATS, aggregate, forecast_table, long_records, records_to_csv, render_text, \
    standard_tables, write_report

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUN = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _csv_list(text: str | None, cast=str) -> list:
    if not text:
        return []
    try:
        return [cast(v.strip()) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _config(args, regime: dict | None = None) -> ExperimentConfig:
    """Config file, then positional overrides, then explicit flags."""
    cfg = load_config(args.config, args.overrides)
    patch: dict = {}
    if getattr(args, "seed", None) is not None:
        patch["seed"] = args.seed
    if getattr(args, "backbone", None):
        patch.setdefault("model", {})["backbone"] = args.backbone
    if getattr(args, "variant", None):
        patch.setdefault("citycond", {})["variant"] = args.variant
    if getattr(args, "frac", None) is not None:
        patch["regime"] = {"kind": "lowdata", "frac": args.frac}
    if regime:
        patch["regime"] = {**patch.get("regime", {}), **regime}
    return cfg.with_overrides(patch) if patch else cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _save_run(out: Path, cfg: ExperimentConfig, result, model) -> None:
    (out / "config.yaml").write_text(dump_config(cfg), encoding="utf-8")
    write_results([result], out / "results.jsonl")
    np.savez(out / "model.npz", **model.state_dict())


def _print_result(result) -> None:
    summary = {"status": result.status, "config_hash": result.config_hash, "seed": result.seed,
               "epochs": len(result.epochs), "best_epoch": result.best_epoch}
    for key in ("val", "test", "pre", "post"):
        if getattr(result, key):
            summary[key] = getattr(result, key)
    if result.error:
        summary["error"] = result.error
    print(json.dumps(summary, indent=2))


def cmd_generate_data(args) -> int:
    cfg = _config(args)
    out = _out(args)
    if cfg.data.source == "trajectories":
        for s in generate_synthetic_trajectories(cfg.data.trajectories):
            write_csv(s, out / f"{s.name}.csv", feature_names=["x", "y"])
        (out / "spec.yaml").write_text(yaml.safe_dump(cfg.data.trajectories.to_dict()), encoding="utf-8")
    elif cfg.data.source == "synthetic":
        cities, truth = generate_synthetic(cfg.data.synthetic)
        for c in cities:
            write_csv(c, out / f"{c.name}.csv")
            write_adjacency(c.adjacency, out / f"{c.name}_adjacency.csv")
        write_ground_truth(truth, out / "ground_truth.yaml")
    else:
        raise UsageError("generate-data needs data.source=synthetic or trajectories")
    print(f"wrote data to {out}")
    return EXIT_OK


def _finish(result) -> int:
    _print_result(result)
    return EXIT_OK if result.ok else EXIT_RUN


def cmd_train(args) -> int:
    cfg = _config(args)
    if cfg.regime.kind == "crosscity":
        raise UsageError("use the transfer subcommand for the crosscity regime")
    out = _out(args)
    result, model, _ = train_model(cfg)
    _save_run(out, cfg, result, model)
    return _finish(result)


def cmd_transfer(args) -> int:
    regime = {"kind": "crosscity"}
    for key in ("source", "target", "adapt_steps", "shot_count"):
        value = getattr(args, key)
        if value is not None:
            regime[key] = int(value) if isinstance(value, str) and value.isdigit() else value
    cfg = _config(args, regime=regime)
    out = _out(args)
    result, model, _ = run_crosscity_model(cfg)
    _save_run(out, cfg, result, model)
    return _finish(result)


def cmd_evaluate(args) -> int:
    run = Path(args.run)
    if not (run / "config.yaml").exists() or not (run / "model.npz").exists():
        raise UsageError(f"{run} is not a run directory (needs config.yaml and model.npz)")
    cfg = load_config(run / "config.yaml")
    data = prepare_dataset(cfg)
    model = build_model(cfg, data)
    with np.load(run / "model.npz") as z:
        model.load_state_dict({k: z[k] for k in z.files})
    cities = None if args.city is None else [data.city_index(int(args.city) if args.city.isdigit() else args.city)]
    metrics = evaluate_split(model, data, args.split, cities)
    metrics.pop("loss", None)
    print(json.dumps(metrics, indent=2))
    return EXIT_OK


def cmd_matrix(args) -> int:
    fracs = _csv_list(args.fracs, float)
    if args.frac is not None:
        fracs.append(args.frac)
        args.frac = None
    base = _config(args)
    seeds = _csv_list(args.seeds, int) if args.seeds else list(DEFAULT_SEEDS)
    regimes = [{"kind": "lowdata", "frac": f} for f in fracs] or None
    configs = expand_matrix(base, _csv_list(args.backbones), _csv_list(args.variants), regimes, seeds)
    out = _out(args)
    path = out / "results.jsonl"
    if path.exists():
        path.unlink()
    results = run_matrix(configs, ResultSink(path), workers=args.workers)
    failed = [r for r in results if not r.ok]
    print(f"{len(results)} runs, {len(failed)} not ok; records in {path}")
    for r in failed:
        print(f"  {r.backbone}/{r.variant}/seed {r.seed}: {r.status}: {r.error}")
    return EXIT_RUN if failed else EXIT_OK


def _load(paths) -> list:
    results = []
    for p in paths:
        if not Path(p).exists():
            raise DataError(f"no such results file: {p}")
        results.extend(read_results(p))
    if not results:
        raise DataError("no result records found")
    return results


def cmd_aggregate(args) -> int:
    results = _load(args.results)
    table = aggregate(results, _csv_list(args.expected_seeds, int) or None)
    for t in standard_tables(table).values():
        print(render_text(t))
    if args.out:
        out = _out(args)
        (out / "aggregate.csv").write_text(records_to_csv(long_records(table)), encoding="utf-8")
    return EXIT_OK


def cmd_report(args) -> int:
    if args.format not in FORMATS:
        raise UsageError(f"unknown format {args.format!r}")
    results = _load(args.results)
    table = aggregate(results, _csv_list(args.expected_seeds, int) or None)
    out = _out(args)
    for p in write_report(table, out, args.format, results):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="citycond", description="City-conditioned forecasting experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p, seed=True):
        p.add_argument("-c", "--config", help="YAML config file")
        p.add_argument("overrides", nargs="*", help="key=value overrides, e.g. model.d_h=32")
        if seed:
            p.add_argument("--seed", type=int)
        p.add_argument("--backbone")
        p.add_argument("--variant")
        p.add_argument("--out", default="runs/latest")
        return p

    p = with_config(sub.add_parser("generate-data", help="write the synthetic dataset as CSV"))
    p.set_defaults(func=cmd_generate_data)

    p = with_config(sub.add_parser("train", help="train one model (full or low-data regime)"))
    p.add_argument("--frac", type=float, help="low-data training fraction")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a saved run on a split")
    p.add_argument("--run", required=True, help="run directory written by train or transfer")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--city", help="restrict to one city (index or name)")
    p.set_defaults(func=cmd_evaluate)

    p = with_config(sub.add_parser("transfer", help="cross-city pre-train and fine-tune"))
    p.add_argument("--source")
    p.add_argument("--target")
    p.add_argument("--adapt-steps", dest="adapt_steps", type=int)
    p.add_argument("--shot-count", dest="shot_count", type=int)
    p.set_defaults(func=cmd_transfer)

    p = with_config(sub.add_parser("matrix", help="run backbones x variants x regimes x seeds"), seed=False)
    p.add_argument("--backbones", help="comma list, default: the config's backbone")
    p.add_argument("--variants", help="comma list, default: the config's variant")
    p.add_argument("--seeds", help="comma list, default 13,21,42")
    p.add_argument("--fracs", help="comma list of low-data fractions")
    p.add_argument("--frac", type=float, help="single low-data fraction")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_matrix)

    for name, func, help_ in (("aggregate", cmd_aggregate, "mean ± std tables from result records"),
                              ("report", cmd_report, "write tables and plot data")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("results", nargs="+", help="results.jsonl files")
        p.add_argument("--expected-seeds", dest="expected_seeds", help="comma list of seeds every group needs")
        p.add_argument("--out", default=None if name == "aggregate" else "reports")
        if name == "report":
            p.add_argument("--format", default="text", help="text, csv or structured")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "overrides"):
        args.overrides = []
    if not hasattr(args, "config"):
        args.config = None
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SchemaMismatchError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ContractError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"run failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
