"""Per-city time series container and per-node z-score normalization."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..backbones.graph import Adjacency
from ..errors import ContractError

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class CitySeries:
    """Values of one city as a ``(T, N, d_x)`` float64 array.

    ``mean``/``std`` are ``(N, d_x)`` once the series has been normalized;
    ``values`` then holds normalized data and :meth:`denormalize` inverts it.
    """

    city_id: int
    name: str
    values: np.ndarray
    adjacency: Adjacency | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    coords: np.ndarray | None = None
    node_ids: tuple[str, ...] = ()
    mode: str = "traffic"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3:
            raise ContractError(f"city values must be (T, N, d_x), got shape {v.shape}")
        object.__setattr__(self, "values", v)
        if not self.node_ids:
            object.__setattr__(self, "node_ids", tuple(str(i) for i in range(v.shape[1])))
        if self.adjacency is not None and self.adjacency.num_nodes != v.shape[1]:
            raise ContractError(f"adjacency has {self.adjacency.num_nodes} nodes, series has {v.shape[1]}")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    @property
    def d_x(self) -> int:
        return self.values.shape[2]

    @property
    def normalized(self) -> bool:
        return self.mean is not None

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        """Map normalized values (trailing axes ``(N, d_x)``) back to raw units."""
        if not self.normalized:
            return np.asarray(x)
        return np.asarray(x) * self.std + self.mean

    def raw_values(self) -> np.ndarray:
        return self.denormalize(self.values)

    def with_city_id(self, city_id: int) -> "CitySeries":
        return replace(self, city_id=city_id)


def zscore_fit_transform(series: CitySeries, train_range: tuple[int, int]) -> CitySeries:
    """Normalize every node with mean/std computed on ``values[start:stop]`` only."""
    start, stop = train_range
    if series.normalized:
        raise ContractError(f"city {series.name!r} is already normalized")
    if not 0 <= start < stop <= series.T:
        raise ContractError(f"empty or invalid training range {train_range} for T={series.T}")
    train = series.values[start:stop]
    mean = train.mean(axis=0)
    std = np.maximum(train.std(axis=0), STD_FLOOR)
    return replace(series, values=(series.values - mean) / std, mean=mean, std=std)
