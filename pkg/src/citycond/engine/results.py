"""Run records and their newline-delimited JSON persistence.

Record schema (version 1), one JSON object per line:

``schema_version``  int
``config_hash``     16 hex chars, identical across seeds of one config
``name``, ``seed``, ``backbone``, ``variant``, ``mode`` ("traffic" | "trajectory")
``regime``          "full" | "lowdata" | "crosscity"
``frac``            float or null (lowdata only)
``source_city``, ``target_city``  names or null (crosscity only)
``status``          "ok" | "diverged" | "failed"
``error``           diagnostic text or null
``epochs``          list of {epoch, train_loss, val_loss}
``best_epoch``, ``best_val_loss``
``val``, ``test``   metric dicts (traffic: mse, mae, mse_norm, mae_norm; trajectory: ade, fde)
``pre``, ``post``   target-city test metrics before/after adaptation (crosscity)
``adaptation_curve``  list of {step, <metrics>}
``params``          {total, backbone, citycond_layer, conditioning}
``attention``       list of {city, t, alpha}; ``t`` is the absolute time index
``wall_clock``      seconds (informational; never used in reports)
``config``          the full config as a mapping
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable

from ..errors import SchemaMismatchError

SCHEMA_VERSION = 1


@dataclass
class RunResult:
    config_hash: str
    name: str
    seed: int
    backbone: str
    variant: str
    mode: str
    regime: str
    frac: float | None = None
    source_city: str | None = None
    target_city: str | None = None
    status: str = "ok"
    error: str | None = None
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_loss: float | None = None
    val: dict[str, float] = field(default_factory=dict)
    test: dict[str, float] = field(default_factory=dict)
    pre: dict[str, float] = field(default_factory=dict)
    post: dict[str, float] = field(default_factory=dict)
    adaptation_curve: list[dict] = field(default_factory=list)
    params: dict[str, int] = field(default_factory=dict)
    attention: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0
    config: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def metrics_finite(self) -> bool:
        groups = [self.val, self.test, self.pre, self.post] + self.adaptation_curve
        return all(math.isfinite(v) for g in groups for k, v in g.items() if k != "step")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=False)

    @classmethod
    def from_dict(cls, data: dict) -> "RunResult":
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaMismatchError(f"record has schema_version {version}, expected {SCHEMA_VERSION}")
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise SchemaMismatchError(f"unknown record fields {sorted(unknown)}")
        return cls(**data)


class ResultSink:
    """Append-only JSONL writer; concurrent writers are serialized by a lock."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def write(self, result: RunResult) -> None:
        line = result.to_json() + "\n"
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line)


def write_results(results: Iterable[RunResult], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in results:
            fh.write(r.to_json() + "\n")
    return path


def read_results(path) -> list[RunResult]:
    """Load records; any record with a foreign schema version is a hard error."""
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaMismatchError(f"{path}:{lineno}: not a JSON record ({exc.msg})") from None
            out.append(RunResult.from_dict(data))
    return out
