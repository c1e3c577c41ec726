"""Chronological splits, sliding windows, low-data subsampling and batching."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError

SPLITS = ("train", "val", "test")
LOWDATA_FRACTIONS = (0.05, 0.10, 0.20, 0.50)


def split_bounds(T: int, ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)) -> dict[str, tuple[int, int]]:
    """Chronological [start, stop) ranges of each split."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ContractError(f"split ratios must be three nonnegative numbers summing to 1, got {ratios}")
    train_end = int(math.floor(T * ratios[0] + 1e-9))
    val_end = int(math.floor(T * (ratios[0] + ratios[1]) + 1e-9))
    return {"train": (0, train_end), "val": (train_end, val_end), "test": (val_end, T)}


def window_count(split_len: int, L_h: int, L_f: int) -> int:
    return max(split_len - L_h - L_f + 1, 0)


@dataclass
class WindowIndex:
    """Window start times per split as ``(city, start)`` rows.

    A window starting at ``s`` covers history ``[s, s + L_h)`` and future
    ``[s + L_h, s + L_h + L_f)``.
    """

    L_h: int
    L_f: int
    windows: dict[str, np.ndarray]
    bounds: dict[int, dict[str, tuple[int, int]]] = field(default_factory=dict)

    def count(self, split: str, city: int | None = None) -> int:
        w = self.windows[split]
        return len(w) if city is None else int(np.sum(w[:, 0] == city))

    def cities(self) -> list[int]:
        return sorted(self.bounds)

    def for_city(self, split: str, city: int) -> np.ndarray:
        w = self.windows[split]
        return w[w[:, 0] == city]

    def replace_split(self, split: str, rows: np.ndarray) -> "WindowIndex":
        windows = dict(self.windows)
        windows[split] = np.asarray(rows, dtype=np.int64).reshape(-1, 2)
        return WindowIndex(self.L_h, self.L_f, windows, self.bounds)

    def restrict(self, cities) -> "WindowIndex":
        keep = set(int(c) for c in cities)
        windows = {s: w[np.isin(w[:, 0], list(keep))] for s, w in self.windows.items()}
        return WindowIndex(self.L_h, self.L_f, windows, {c: b for c, b in self.bounds.items() if c in keep})


def build_windows(series, L_h: int, L_f: int, splits: tuple[float, float, float] = (0.7, 0.1, 0.2)) -> WindowIndex:
    """Stride-1 windows inside each chronological split of each city."""
    if L_h < 1 or L_f < 1:
        raise ContractError(f"L_h and L_f must be >= 1, got {L_h}, {L_f}")
    if not isinstance(series, (list, tuple)):
        series = [series]
    rows: dict[str, list[tuple[int, int]]] = {s: [] for s in SPLITS}
    bounds = {}
    for s in series:
        b = split_bounds(s.T, splits)
        bounds[s.city_id] = b
        for split, (lo, hi) in b.items():
            n = window_count(hi - lo, L_h, L_f)
            rows[split].extend((s.city_id, lo + i) for i in range(n))
    windows = {k: np.array(v, dtype=np.int64).reshape(-1, 2) for k, v in rows.items()}
    return WindowIndex(L_h, L_f, windows, bounds)


def subsample_lowdata(index: WindowIndex, frac: float, seed: int) -> WindowIndex:
    """Keep ceil(frac * n_c) uniformly drawn training windows of every city."""
    if not 0.0 < frac <= 1.0:
        raise ContractError(f"frac must lie in (0, 1], got {frac}")
    rng = np.random.default_rng([seed, 3])
    kept = []
    for city in index.cities():
        rows = index.for_city("train", city)
        n = len(rows)
        k = min(n, math.ceil(frac * n - 1e-9))
        pick = np.sort(rng.choice(n, size=k, replace=False)) if k < n else np.arange(n)
        kept.append(rows[pick])
    rows = np.concatenate(kept) if kept else np.zeros((0, 2), dtype=np.int64)
    return index.replace_split("train", rows)


def city_batches(rows: np.ndarray, batch_size: int, rng: np.random.Generator | None = None) -> list[np.ndarray]:
    """City-homogeneous batches, interleaved round-robin over cities.

    With ``rng`` each city's windows are shuffled first; without it the order
    is chronological (used for evaluation).
    """
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    per_city = []
    for city in np.unique(rows[:, 0]):
        r = rows[rows[:, 0] == city]
        if rng is not None:
            r = r[rng.permutation(len(r))]
        per_city.append([r[i:i + batch_size] for i in range(0, len(r), batch_size)])
    out = []
    for i in range(max((len(b) for b in per_city), default=0)):
        out.extend(b[i] for b in per_city if i < len(b))
    return out


def gather(values: np.ndarray, starts: np.ndarray, L_h: int, L_f: int) -> tuple[np.ndarray, np.ndarray]:
    """History ``(B, L_h, N, d_x)`` and future ``(B, L_f, N, d_x)`` arrays."""
    idx = starts[:, None] + np.arange(L_h + L_f)[None, :]
    block = values[idx]
    return block[:, :L_h], block[:, L_h:]
