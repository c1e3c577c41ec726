"""Shared backbone scaffolding: spec, per-city IO selection, conditioning hook."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ContractError
from ..layer import CityCondConfig, CityCondLayer, count_citycond_params
from ..nn import ConditionedLinear, Module
from ..tensor import Tensor

KINDS = ("gru", "tcn", "transformer", "gnn", "stgcn", "lstm_traj")
GRAPH_KINDS = ("gnn", "stgcn")


@dataclass
class BackboneSpec:
    kind: str
    d_h: int = 64
    layers: int | None = None
    heads: int = 4
    dilations: tuple[int, ...] = (1, 2, 4, 8)
    kernel: int = 3
    node_blocks: int = 4
    ff_mult: int = 4
    readout_mult: int = 4
    hops: int | None = None
    adjacency_required: bool = field(init=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"backbone kind must be one of {KINDS}, got {self.kind!r}")
        self.dilations = tuple(int(d) for d in self.dilations)
        if self.layers is None:
            self.layers = {"gru": 2, "tcn": len(self.dilations), "transformer": 4,
                           "gnn": 2, "stgcn": 2, "lstm_traj": 1}[self.kind]
        if self.kind == "tcn":
            self.layers = len(self.dilations)
        if self.hops is None:
            self.hops = 2 if self.kind == "stgcn" else 1
        self.adjacency_required = self.kind in GRAPH_KINDS
        if self.d_h < 1 or self.layers < 1:
            raise ValueError("d_h and layers must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d


class Backbone(Module):
    """Common forward contract: ``(B, L_h, N, d_x)`` history -> ``(B, L_f, N, d_x)``.

    ``city_shapes[c] = (N_c, L_f_c)``. Size-dependent input and output maps are
    shared when every city has the same shape and held per city otherwise.
    The CityCond layer is invoked once, right after the first block.
    """

    has_nodes_at_hook = True

    def __init__(self, spec: BackboneSpec, cond: CityCondConfig, city_shapes: Sequence[tuple[int, int]],
                 L_h: int, d_x: int, seed: int):
        self.spec = spec
        self.city_shapes = [tuple(int(v) for v in s) for s in city_shapes]
        self.L_h = L_h
        self.d_x = d_x
        self.shared_io = len(set(self.city_shapes)) == 1
        self.last_attention: Tensor | None = None
        rng = np.random.default_rng([seed, 1])
        cond_rng = np.random.default_rng([seed, 2])
        self.citycond = CityCondLayer(cond, len(self.city_shapes), spec.d_h, cond_rng)
        self._build(rng)

    @property
    def num_cities(self) -> int:
        return len(self.city_shapes)

    def _build(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def _io_slot(self, c: int) -> int:
        if not 0 <= c < self.num_cities:
            raise IndexError(f"city index {c} out of range [0, {self.num_cities})")
        return 0 if self.shared_io else c

    def _io_cities(self) -> list[int]:
        return [0] if self.shared_io else list(range(self.num_cities))

    def hook(self, c: int, h: Tensor) -> Tensor:
        out, alpha = self.citycond(c, h, has_nodes=self.has_nodes_at_hook)
        self.last_attention = alpha
        return out

    def _check_input(self, x: Tensor, c: int) -> None:
        if x.ndim != 4:
            raise ContractError(f"expected (B, L_h, N, d_x) input, got shape {x.shape}")
        if x.shape[1] != self.L_h:
            raise ContractError(f"window length {x.shape[1]} != L_h={self.L_h}")
        self._io_slot(c)
        N, _ = self.city_shapes[c]
        if x.shape[2] != N or x.shape[3] != self.d_x:
            raise ContractError(f"city {c} expects {N} nodes x {self.d_x} features, got {x.shape[2:]}")

    def forward(self, x: Tensor, c: int, adjacency=None) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor, c: int, adjacency=None) -> Tensor:
        return self.forward(x, c, adjacency)

    def conditioned_inputs(self) -> list[ConditionedLinear]:
        found: list[ConditionedLinear] = []
        _collect(self, found)
        return found

    def conditioning_parameters(self) -> int:
        """Parameters that exist only because of city conditioning."""
        return self.citycond.num_parameters() + sum(m.conditioning_parameters for m in self.conditioned_inputs())

    def augment_width(self) -> int:
        """Total fan-out of inputs that receive the concatenated city embedding."""
        if not self.citycond.d_c:
            return 0
        return sum(m.proj.weight.shape[1] for m in self.conditioned_inputs())

    def expected_conditioning_parameters(self) -> int:
        cfg = self.citycond.config
        d_c = self.citycond.d_c
        layer = count_citycond_params(cfg.variant, self.num_cities, d_c, cfg.K, cfg.d_m, self.spec.d_h)
        return layer + d_c * self.augment_width()


def _collect(obj, out: list) -> None:
    if isinstance(obj, ConditionedLinear):
        out.append(obj)
        return
    if isinstance(obj, Module):
        for v in obj.__dict__.values():
            _collect(v, out)
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            _collect(v, out)
    elif isinstance(obj, dict):
        for v in obj.values():
            _collect(v, out)
