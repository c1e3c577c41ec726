"""CSV dataset format.

One file per city. Header: ``timestamp`` followed by one column per node
(``d_x == 1``) or per node feature written ``<node>/<feature>`` (``d_x > 1``,
e.g. ``a0/x,a0/y``). Empty cells and ``nan``/``NA`` are missing and are
forward-filled, then back-filled. Numbers use dot decimals.

An optional adjacency file is a headerless square CSV of weights. The
synthetic generator also writes a YAML sidecar with its ground truth.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from ..backbones.graph import Adjacency
from ..errors import CsvParseError, DataError
from .series import CitySeries

MISSING = {"", "nan", "NaN", "NA", "na", "null"}


@dataclass(frozen=True)
class CsvSchema:
    mode: str = "traffic"
    timestamp_column: str = "timestamp"


def _parse_cell(cell: str, line: int) -> float:
    cell = cell.strip()
    if cell in MISSING:
        return np.nan
    try:
        return float(cell)
    except ValueError:
        raise CsvParseError(f"non-numeric cell {cell!r}", line) from None


def _fill_missing(values: np.ndarray, names: list[str]) -> np.ndarray:
    out = values.copy()
    T = out.shape[0]
    for j in range(out.shape[1]):
        col = out[:, j]
        ok = ~np.isnan(col)
        if not ok.any():
            raise DataError(f"column for node {names[j]!r} has no values")
        idx = np.where(ok, np.arange(T), 0)
        np.maximum.accumulate(idx, out=idx)
        filled = col[idx]
        first = int(np.argmax(ok))
        filled[:first] = col[first]
        out[:, j] = filled
    return out


def load_csv(path, schema: CsvSchema | None = None, city_id: int = 0, name: str | None = None,
             adjacency_path=None) -> CitySeries:
    schema = schema or CsvSchema()
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError("empty file", 1) from None
        if not header or header[0].strip() != schema.timestamp_column:
            raise CsvParseError(f"first header column must be {schema.timestamp_column!r}", 1)
        columns = [h.strip() for h in header[1:]]
        if not columns:
            raise CsvParseError("no node columns", 1)
        rows, stamps = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvParseError(f"expected {len(header)} cells, found {len(row)}", line_no)
            stamps.append(row[0])
            rows.append([_parse_cell(c, line_no) for c in row[1:]])
    if not rows:
        raise CsvParseError("no data rows", 2)
    flat = _fill_missing(np.array(rows, dtype=np.float64), columns)

    nodes, features = _split_columns(columns)
    values = flat.reshape(len(rows), len(nodes), len(features))
    adjacency = None
    if adjacency_path is not None:
        w = np.loadtxt(adjacency_path, delimiter=",", ndmin=2)
        adjacency = Adjacency(w)
    return CitySeries(city_id=city_id, name=name or path.stem, values=values, adjacency=adjacency,
                      node_ids=tuple(nodes), mode=schema.mode, meta={"timestamps": stamps})


def _split_columns(columns: list[str]) -> tuple[list[str], list[str]]:
    if not any("/" in c for c in columns):
        return columns, ["value"]
    nodes: list[str] = []
    feats: dict[str, list[str]] = {}
    for c in columns:
        if "/" not in c:
            raise CsvParseError(f"column {c!r} mixes plain and node/feature naming", 1)
        node, feat = c.rsplit("/", 1)
        if node not in feats:
            nodes.append(node)
            feats[node] = []
        feats[node].append(feat)
    expected = feats[nodes[0]]
    for node in nodes:
        if feats[node] != expected:
            raise CsvParseError(f"node {node!r} has features {feats[node]}, expected {expected}", 1)
    if [c for n in nodes for c in (f"{n}/{f}" for f in expected)] != columns:
        raise CsvParseError("node/feature columns must be grouped node by node", 1)
    return nodes, expected


def write_csv(series: CitySeries, path, feature_names: list[str] | None = None) -> Path:
    """Write raw values so that :func:`load_csv` reproduces them bit-exactly."""
    path = Path(path)
    values = series.raw_values()
    T, N, d_x = values.shape
    if d_x == 1:
        header = list(series.node_ids)
    else:
        feature_names = feature_names or (["x", "y"] if d_x == 2 else [str(k) for k in range(d_x)])
        header = [f"{n}/{f}" for n in series.node_ids for f in feature_names]
    flat = values.reshape(T, N * d_x)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp"] + header)
        for t in range(T):
            w.writerow([t] + [repr(float(v)) for v in flat[t]])
    return path


def write_adjacency(adjacency: Adjacency, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in adjacency.weights:
            w.writerow([repr(float(v)) for v in row])
    return path


def write_ground_truth(truth: dict, path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(truth, sort_keys=True))
    return path


def read_ground_truth(path) -> dict:
    return yaml.safe_load(Path(path).read_text())
