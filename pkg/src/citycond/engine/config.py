"""Declarative experiment configuration (validated with pydantic)."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..backbones import BackboneSpec
from ..data.synthetic import SyntheticSpec, TrajectorySpec
from ..errors import ConfigError
from ..layer import CityCondConfig

DEFAULT_SEEDS = (13, 21, 42)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CityCondSettings(_Strict):
    variant: Literal["base", "cityid", "citymem"] = "citymem"
    d_c: int = Field(16, ge=0)
    K: int = Field(8, ge=1)
    d_m: int = Field(32, ge=1)
    pooling: Literal["mean", "max"] = "mean"
    use_city_embedding_in_query: bool = True

    def to_layer(self) -> CityCondConfig:
        return CityCondConfig(**self.model_dump())


class ModelSettings(_Strict):
    backbone: Literal["gru", "tcn", "transformer", "gnn", "stgcn", "lstm_traj"] = "transformer"
    d_h: int = Field(64, ge=1)
    layers: Optional[int] = Field(None, ge=1)
    heads: int = Field(4, ge=1)
    dilations: tuple[int, ...] = (1, 2, 4, 8)
    kernel: int = Field(3, ge=1)
    node_blocks: int = Field(4, ge=1)
    ff_mult: int = Field(4, ge=1)
    readout_mult: int = Field(4, ge=1)
    hops: Optional[int] = Field(None, ge=0)

    def to_spec(self) -> BackboneSpec:
        return BackboneSpec(kind=self.backbone, d_h=self.d_h, layers=self.layers, heads=self.heads,
                            dilations=self.dilations, kernel=self.kernel, node_blocks=self.node_blocks,
                            ff_mult=self.ff_mult, readout_mult=self.readout_mult, hops=self.hops)


class RegimeSettings(_Strict):
    kind: Literal["full", "lowdata", "crosscity"] = "full"
    frac: Optional[float] = Field(None, gt=0.0, le=1.0)
    source: Union[int, str, None] = None
    target: Union[int, str, None] = None
    adapt_steps: int = Field(200, ge=0)
    shot_count: int = Field(100, ge=1)
    eval_every: int = Field(20, ge=1)
    freeze_backbone: bool = False

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "lowdata" and self.frac is None:
            raise ValueError("lowdata regime needs frac")
        if self.kind != "lowdata" and self.frac is not None:
            raise ValueError("frac is only valid for the lowdata regime")
        if self.kind == "crosscity":
            if self.source is None or self.target is None:
                raise ValueError("crosscity regime needs source and target")
            if self.source == self.target:
                raise ValueError("crosscity source and target must differ")
            if self.adapt_steps % self.eval_every:
                raise ValueError("adapt_steps must be a multiple of eval_every")
        return self

    def label(self) -> str:
        if self.kind == "lowdata":
            return f"lowdata:{self.frac:g}"
        if self.kind == "crosscity":
            return f"crosscity:{self.source}->{self.target}"
        return "full"


class CsvCity(_Strict):
    path: str
    name: Optional[str] = None
    adjacency: Optional[str] = None


class DataSettings(_Strict):
    source: Literal["synthetic", "trajectories", "csv"] = "synthetic"
    synthetic: SyntheticSpec = SyntheticSpec()
    trajectories: TrajectorySpec = TrajectorySpec()
    csv: tuple[CsvCity, ...] = ()
    mode: Literal["traffic", "trajectory"] = "traffic"
    L_h: int = Field(12, ge=1)
    L_f: int = Field(12, ge=1)
    splits: tuple[float, float, float] = (0.7, 0.1, 0.2)
    period: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if self.source == "csv" and not self.csv:
            raise ValueError("csv source needs at least one file")
        if self.source == "trajectories" and self.mode != "trajectory":
            raise ValueError("the trajectories source needs mode=trajectory")
        if self.source == "synthetic" and self.mode != "traffic":
            raise ValueError("the synthetic source needs mode=traffic")
        if abs(sum(self.splits) - 1.0) > 1e-9 or min(self.splits) < 0:
            raise ValueError("splits must be nonnegative and sum to 1")
        return self

    def steps_per_day(self) -> int | None:
        if self.period is not None:
            return self.period
        return self.synthetic.period if self.source == "synthetic" else None


class TrainSettings(_Strict):
    lr: float = Field(1e-3, gt=0)
    batch_size: int = Field(32, ge=1)
    eval_batch_size: int = Field(128, ge=1)
    max_epochs: int = Field(100, ge=1)
    patience: int = Field(10, ge=0)
    divergence_threshold: float = Field(1e6, gt=0)


class ExperimentConfig(_Strict):
    name: str = "experiment"
    seed: int = 13
    model: ModelSettings = ModelSettings()
    citycond: CityCondSettings = CityCondSettings()
    regime: RegimeSettings = RegimeSettings()
    data: DataSettings = DataSettings()
    train: TrainSettings = TrainSettings()
    attention_logging: bool = True
    time_buckets: int = Field(24, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if self.model.backbone == "lstm_traj" and self.citycond.variant == "citymem":
            raise ValueError("lstm_traj supports the base and cityid variants only")
        if (self.model.backbone == "lstm_traj") != (self.data.mode == "trajectory"):
            raise ValueError("lstm_traj is the trajectory backbone and needs trajectory data")
        return self

    @property
    def variant(self) -> str:
        return self.citycond.variant

    def config_hash(self) -> str:
        """Hash of everything except the seed, so seeds of one config share it."""
        payload = self.model_dump(mode="json", exclude={"seed"})
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        return load_config_dict(_deep_merge(self.to_dict(), overrides))


def _deep_merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_override(pair: str) -> dict:
    """``a.b.c=value`` -> nested dict; the value is parsed as YAML."""
    if "=" not in pair:
        raise ConfigError(f"override must look like key=value, got {pair!r}")
    key, raw = pair.split("=", 1)
    if not key:
        raise ConfigError(f"empty key in override {pair!r}")
    value = yaml.safe_load(raw) if raw else None
    out: dict = {}
    node = out
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


def load_config_dict(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, overrides: list[str] = ()) -> ExperimentConfig:
    data: dict = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a mapping at top level")
        data = loaded or {}
    for pair in overrides:
        data = _deep_merge(data, parse_override(pair))
    return load_config_dict(data)


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)
