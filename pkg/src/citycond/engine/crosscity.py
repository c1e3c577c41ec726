"""Pre-train on a source city, then fine-tune briefly on a target city."""

from __future__ import annotations

import time

import numpy as np

from .. import tensor as T
from ..backbones import Backbone
from ..data import city_batches
from ..errors import DataError
from .config import ExperimentConfig
from .optim import Adam
from .results import RunResult
from .train import (Dataset, attention_records, batch_loss, build_model, evaluate_split, fit, new_result,
                    param_summary, prepare_dataset, public_metrics, _record_fit)


def init_unseen_embeddings(model: Backbone, seen: list[int], unseen: list[int]) -> None:
    """Set embedding rows of cities never trained on to the mean of the trained rows."""
    table = model.citycond.embedding
    if table is None or not seen or not unseen:
        return
    mean = table.table.data[seen].mean(axis=0)
    for c in unseen:
        table.table.data[c] = mean


def adaptable_parameters(model: Backbone, freeze_backbone: bool) -> dict:
    params = dict(model.named_parameters())
    if not freeze_backbone:
        return params
    keep = {}
    for name, p in params.items():
        if name.startswith("citycond.") or name.endswith("cond_weight"):
            keep[name] = p
    return keep


def _shot_batches(shots: np.ndarray, batch_size: int, seed: int):
    # endless stream of shuffled passes over the shot windows
    sweep = 0
    while True:
        rng = np.random.default_rng([seed, 5, sweep])
        yield from city_batches(shots, batch_size, rng)
        sweep += 1


def run_crosscity_model(config: ExperimentConfig, dataset: Dataset | None = None
                        ) -> tuple[RunResult, Backbone, Dataset]:
    start = time.perf_counter()
    regime = config.regime
    data = prepare_dataset(config) if dataset is None else dataset
    src = data.city_index(regime.source)
    tgt = data.city_index(regime.target)
    result = new_result(config)
    result.source_city = data.cities[src].name
    result.target_city = data.cities[tgt].name
    model = build_model(config, data, scale_cities=[src])
    result.params = param_summary(model)

    outcome = fit(model, data, config.train, config.seed, data.rows("train", [src]), data.rows("val", [src]))
    _record_fit(result, outcome)
    if outcome.best_epoch is None:
        result.wall_clock = time.perf_counter() - start
        return result, model, data
    result.val = public_metrics(evaluate_split(model, data, "val", [src], config.train.eval_batch_size))
    init_unseen_embeddings(model, [src], [tgt])

    bs = config.train.eval_batch_size
    pre = evaluate_split(model, data, "test", [tgt], bs)
    result.pre = public_metrics(pre)
    result.adaptation_curve = [{"step": 0, **result.pre}]

    shots = data.rows("train", [tgt])[:regime.shot_count]
    if len(shots) == 0:
        raise DataError(f"target city {result.target_city!r} has no training windows to adapt on")
    opt = Adam(adaptable_parameters(model, regime.freeze_backbone), lr=config.train.lr)
    stream = _shot_batches(shots, config.train.batch_size, config.seed)
    for step in range(1, regime.adapt_steps + 1):
        loss = batch_loss(model, data, next(stream))
        model.zero_grad()
        loss.backward()
        opt.step()
        if step % regime.eval_every == 0:
            m = public_metrics(evaluate_split(model, data, "test", [tgt], bs))
            result.adaptation_curve.append({"step": step, **m})

    store = {} if config.attention_logging and model.citycond.config.uses_memory else None
    result.post = public_metrics(evaluate_split(model, data, "test", [tgt], bs, attention=store))
    result.test = dict(result.post)
    if store:
        result.attention = attention_records(store, data)
    result.wall_clock = time.perf_counter() - start
    return result, model, data


def run_crosscity(config: ExperimentConfig, dataset: Dataset | None = None) -> RunResult:
    return run_crosscity_model(config, dataset)[0]
