"""Cross-product expansion and fault-isolated execution of many runs."""

from __future__ import annotations

import itertools
import traceback
from concurrent.futures import ProcessPoolExecutor
from typing import Iterable, Sequence

from .config import DEFAULT_SEEDS, ExperimentConfig
from .crosscity import run_crosscity
from .results import ResultSink, RunResult
from .train import new_result, train


def expand_matrix(base: ExperimentConfig, backbones: Sequence[str] | None = None,
                  variants: Sequence[str] | None = None, regimes: Sequence[dict] | None = None,
                  seeds: Sequence[int] = DEFAULT_SEEDS) -> list[ExperimentConfig]:
    """Cross product backbones x variants x regimes x seeds, in that nesting order."""
    backbones = [base.model.backbone] if not backbones else list(backbones)
    variants = [base.citycond.variant] if not variants else list(variants)
    regimes = [None] if not regimes else list(regimes)
    out = []
    for bb, var, reg, seed in itertools.product(backbones, variants, regimes, seeds):
        patch: dict = {"model": {"backbone": bb}, "citycond": {"variant": var}, "seed": int(seed)}
        if reg is not None:
            patch["regime"] = reg
        out.append(base.with_overrides(patch))
    return out


def execute(config: ExperimentConfig) -> RunResult:
    """Run one config; any exception becomes a ``failed`` record."""
    try:
        if config.regime.kind == "crosscity":
            return run_crosscity(config)
        return train(config)
    except Exception as exc:  # isolation boundary: the matrix must keep going
        result = new_result(config)
        result.status = "failed"
        result.error = f"{type(exc).__name__}: {exc}"
        result.config["traceback"] = traceback.format_exc(limit=5)
        return result


def run_matrix(configs: Iterable[ExperimentConfig], sink: ResultSink | None = None,
               workers: int = 1) -> list[RunResult]:
    """Execute every config; results come back in input order.

    With ``workers > 1`` runs fan out over processes. Records go to ``sink``
    as runs complete, one line each.
    """
    configs = list(configs)
    results: list[RunResult] = []
    if workers <= 1:
        for cfg in configs:
            r = execute(cfg)
            if sink is not None:
                sink.write(r)
            results.append(r)
        return results
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for r in pool.map(execute, configs):
            if sink is not None:
                sink.write(r)
            results.append(r)
    return results
