"""Dataset preparation, the supervised training loop and split evaluation."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..backbones import Backbone, build_backbone
from ..data import (CitySeries, CsvSchema, WindowIndex, build_windows, city_batches, gather,
                    generate_synthetic, generate_synthetic_trajectories, load_csv, subsample_lowdata,
                    zscore_fit_transform)
from ..errors import ContractError, DataError
from ..tensor import Tensor
from .config import ExperimentConfig, TrainSettings
from .metrics import RunningMetric
from .optim import Adam
from .results import RunResult


@dataclass
class Dataset:
    """Cities plus the window index a run trains and evaluates on.

    Traffic cities hold z-scored values (statistics from each city's own
    training range); trajectory scenes hold raw positions in meters.
    """

    cities: list[CitySeries]
    index: WindowIndex
    mode: str
    L_h: int
    L_f: int

    @property
    def d_x(self) -> int:
        return self.cities[0].d_x

    def city_index(self, ref) -> int:
        if isinstance(ref, (int, np.integer)) and not isinstance(ref, bool):
            if not 0 <= int(ref) < len(self.cities):
                raise ContractError(f"city index {ref} out of range [0, {len(self.cities)})")
            return int(ref)
        for c in self.cities:
            if c.name == str(ref):
                return c.city_id
        raise ContractError(f"unknown city {ref!r}; known: {[c.name for c in self.cities]}")

    def rows(self, split: str, cities=None) -> np.ndarray:
        rows = self.index.windows[split]
        if cities is not None:
            rows = rows[np.isin(rows[:, 0], list(cities))]
        return rows

    def batch(self, rows: np.ndarray) -> tuple[int, np.ndarray, np.ndarray]:
        cities = np.unique(rows[:, 0])
        if len(cities) != 1:
            raise ContractError("a batch must come from a single city")
        c = int(cities[0])
        x, y = gather(self.cities[c].values, rows[:, 1], self.L_h, self.L_f)
        return c, x, y

    def step_scale(self, cities=None) -> float:
        """Mean per-step displacement over training ranges (trajectory data)."""
        steps = []
        for c in cities if cities is not None else range(len(self.cities)):
            lo, hi = self.index.bounds[c]["train"]
            v = self.cities[c].values[lo:hi]
            steps.append(np.linalg.norm(np.diff(v, axis=0), axis=-1).ravel())
        scale = float(np.mean(np.concatenate(steps))) if steps else 1.0
        return scale if scale > 0 else 1.0


def load_cities(config: ExperimentConfig) -> list[CitySeries]:
    data = config.data
    if data.source == "synthetic":
        cities, _ = generate_synthetic(data.synthetic)
        return cities
    if data.source == "trajectories":
        return generate_synthetic_trajectories(data.trajectories)
    schema = CsvSchema(mode=data.mode)
    return [load_csv(entry.path, schema, city_id=i, name=entry.name, adjacency_path=entry.adjacency)
            for i, entry in enumerate(data.csv)]


def prepare_dataset(config: ExperimentConfig, cities: list[CitySeries] | None = None) -> Dataset:
    data = config.data
    cities = load_cities(config) if cities is None else list(cities)
    if not cities:
        raise DataError("no cities to train on")
    if len({c.d_x for c in cities}) != 1:
        raise DataError("all cities must have the same number of features per node")
    index = build_windows(cities, data.L_h, data.L_f, data.splits)
    if data.mode == "traffic":
        cities = [zscore_fit_transform(c, index.bounds[c.city_id]["train"]) for c in cities]
    for c in cities:
        for split in ("train", "val", "test"):
            if index.count(split, c.city_id) == 0:
                raise DataError(f"city {c.name!r} has no {split} windows for L_h={data.L_h}, L_f={data.L_f}")
    if config.regime.kind == "lowdata":
        index = subsample_lowdata(index, config.regime.frac, config.seed)
    return Dataset(cities, index, data.mode, data.L_h, data.L_f)


def build_model(config: ExperimentConfig, dataset: Dataset, scale_cities=None) -> Backbone:
    shapes = [(c.N, dataset.L_f) for c in dataset.cities]
    model = build_backbone(config.model.to_spec(), config.citycond.to_layer(), shapes,
                           dataset.L_h, dataset.d_x, config.seed)
    if dataset.mode == "trajectory":
        model.step_scale = dataset.step_scale(scale_cities)
    return model


def forward(model: Backbone, dataset: Dataset, c: int, x: np.ndarray) -> Tensor:
    adjacency = dataset.cities[c].adjacency if model.spec.adjacency_required else None
    return model(Tensor(x), c, adjacency)


def batch_loss(model: Backbone, dataset: Dataset, rows: np.ndarray) -> Tensor:
    """Mean squared error in the space the data is stored in."""
    c, x, y = dataset.batch(rows)
    return T.mean(T.square(forward(model, dataset, c, x) - Tensor(y)))


def evaluate_split(model: Backbone, dataset: Dataset, split: str, cities=None, batch_size: int = 128,
                   attention: dict | None = None) -> dict[str, float]:
    """Metrics over every window of ``split`` (optionally a subset of cities).

    Traffic: ``mse``/``mae`` in raw units after denormalization and
    ``mse_norm``/``mae_norm`` in z-score units. Trajectory: ``ade``/``fde``.
    The training objective on the same windows is returned as ``loss``.
    When ``attention`` is a dict, slot weights are accumulated into it as
    ``{(city, t): [sum, count]}``.
    """
    rows = dataset.rows(split, cities)
    if len(rows) == 0:
        raise ContractError(f"split {split!r} has no windows")
    acc = {k: RunningMetric() for k in ("sq", "abs", "sq_n", "abs_n", "ade", "fde")}
    with T.no_grad():
        for b in city_batches(rows, batch_size):
            c, x, y = dataset.batch(b)
            pred = forward(model, dataset, c, x).data
            if attention is not None and model.last_attention is not None:
                _accumulate_attention(attention, c, b[:, 1], model.last_attention.data)
            err = pred - y
            acc["sq_n"].add(float(np.sum(err * err)), err.size)
            acc["abs_n"].add(float(np.sum(np.abs(err))), err.size)
            if dataset.mode == "traffic":
                city = dataset.cities[c]
                raw = city.denormalize(pred) - city.denormalize(y)
                acc["sq"].add(float(np.sum(raw * raw)), raw.size)
                acc["abs"].add(float(np.sum(np.abs(raw))), raw.size)
            else:
                dist = np.sqrt(np.sum(err * err, axis=-1))
                acc["ade"].add(float(np.sum(dist)), dist.size)
                acc["fde"].add(float(np.sum(dist[:, -1])), dist[:, -1].size)
    if dataset.mode == "traffic":
        return {"mse": acc["sq"].value, "mae": acc["abs"].value,
                "mse_norm": acc["sq_n"].value, "mae_norm": acc["abs_n"].value, "loss": acc["sq_n"].value}
    return {"ade": acc["ade"].value, "fde": acc["fde"].value, "loss": acc["sq_n"].value}


def evaluate_traffic(model: Backbone, dataset: Dataset, split: str, cities=None) -> tuple[float, float]:
    """(MSE, MAE) in denormalized units over all windows, nodes and horizons."""
    if dataset.mode != "traffic":
        raise ContractError("evaluate_traffic needs traffic data")
    m = evaluate_split(model, dataset, split, cities)
    return m["mse"], m["mae"]


def evaluate_trajectory(model: Backbone, dataset: Dataset, split: str, cities=None) -> tuple[float, float]:
    """(ADE, FDE) in meters averaged over agents and windows."""
    if dataset.mode != "trajectory":
        raise ContractError("evaluate_trajectory needs trajectory data")
    m = evaluate_split(model, dataset, split, cities)
    return m["ade"], m["fde"]


def _accumulate_attention(store: dict, c: int, starts: np.ndarray, alpha: np.ndarray) -> None:
    # alpha is (B, steps, K) over the history window
    steps = alpha.shape[1]
    for i, s in enumerate(starts):
        for tau in range(steps):
            key = (c, int(s) + tau)
            slot = store.get(key)
            if slot is None:
                store[key] = [alpha[i, tau].copy(), 1]
            else:
                slot[0] += alpha[i, tau]
                slot[1] += 1


def attention_records(store: dict, dataset: Dataset) -> list[dict]:
    return [{"city": dataset.cities[c].name, "t": t, "alpha": (total / n).tolist()}
            for (c, t), (total, n) in sorted(store.items())]


def public_metrics(m: dict) -> dict[str, float]:
    return {k: v for k, v in m.items() if k != "loss"}


@dataclass
class FitOutcome:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_loss: float | None = None
    diverged: bool = False
    message: str | None = None


def fit(model: Backbone, dataset: Dataset, settings: TrainSettings, seed: int,
        train_rows: np.ndarray, val_rows: np.ndarray) -> FitOutcome:
    """Adam training with early stopping; the best-validation weights are restored.

    Batch order for epoch ``e`` comes from ``default_rng([seed, 4, e])``.
    Training stops once ``patience`` consecutive epochs fail to improve the
    validation loss, so ``patience=0`` runs exactly one epoch. A validation
    loss above ``settings.divergence_threshold`` (or non-finite) stops the
    run and flags it as diverged.
    """
    if len(train_rows) == 0:
        raise DataError("no training windows")
    opt = Adam(dict(model.named_parameters()), lr=settings.lr)
    out = FitOutcome()
    best_state = None
    stale = 0
    for epoch in range(settings.max_epochs):
        rng = np.random.default_rng([seed, 4, epoch])
        total = 0.0
        for rows in city_batches(train_rows, settings.batch_size, rng):
            loss = batch_loss(model, dataset, rows)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(rows)
        train_loss = total / len(train_rows)
        val_loss = _objective(model, dataset, val_rows, settings.eval_batch_size)
        out.epochs.append({"epoch": epoch + 1, "train_loss": train_loss, "val_loss": val_loss})
        if not math.isfinite(val_loss) or val_loss > settings.divergence_threshold:
            out.diverged = True
            out.message = f"validation loss {val_loss!r} exceeded {settings.divergence_threshold:g} at epoch {epoch + 1}"
            break
        if out.best_val_loss is None or val_loss < out.best_val_loss:
            out.best_val_loss, out.best_epoch = val_loss, epoch + 1
            best_state = model.state_dict()
            stale = 0
        else:
            stale += 1
        if stale >= settings.patience:
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    return out


def _objective(model: Backbone, dataset: Dataset, rows: np.ndarray, batch_size: int) -> float:
    acc = RunningMetric()
    with T.no_grad():
        for b in city_batches(rows, batch_size):
            c, x, y = dataset.batch(b)
            err = forward(model, dataset, c, x).data - y
            acc.add(float(np.sum(err * err)), err.size)
    return acc.value


def param_summary(model: Backbone) -> dict[str, int]:
    total = model.num_parameters()
    cond = model.conditioning_parameters()
    return {"total": total, "backbone": total - cond, "citycond_layer": model.citycond.num_parameters(),
            "conditioning": cond}


def new_result(config: ExperimentConfig) -> RunResult:
    r = config.regime
    return RunResult(
        config_hash=config.config_hash(), name=config.name, seed=config.seed, backbone=config.model.backbone,
        variant=config.citycond.variant, mode=config.data.mode, regime=r.kind, frac=r.frac,
        source_city=None if r.source is None else str(r.source),
        target_city=None if r.target is None else str(r.target), config=config.to_dict())


def train_model(config: ExperimentConfig, dataset: Dataset | None = None) -> tuple[RunResult, Backbone, Dataset]:
    """Train on every city of the dataset; returns the record, the model and the data."""
    start = time.perf_counter()
    data = prepare_dataset(config) if dataset is None else dataset
    model = build_model(config, data)
    result = new_result(config)
    result.params = param_summary(model)
    outcome = fit(model, data, config.train, config.seed, data.rows("train"), data.rows("val"))
    _record_fit(result, outcome)
    if outcome.best_epoch is not None:
        result.val = public_metrics(evaluate_split(model, data, "val", batch_size=config.train.eval_batch_size))
        store = {} if config.attention_logging and model.citycond.config.uses_memory else None
        result.test = public_metrics(evaluate_split(model, data, "test", batch_size=config.train.eval_batch_size,
                                                    attention=store))
        if store:
            result.attention = attention_records(store, data)
    result.wall_clock = time.perf_counter() - start
    return result, model, data


def train(config: ExperimentConfig, dataset: Dataset | None = None) -> RunResult:
    return train_model(config, dataset)[0]


def _record_fit(result: RunResult, outcome: FitOutcome) -> None:
    result.epochs = outcome.epochs
    result.best_epoch = outcome.best_epoch
    result.best_val_loss = outcome.best_val_loss
    if outcome.diverged:
        result.status = "diverged"
        result.error = outcome.message
