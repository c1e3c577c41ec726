"""City-conditioned memory layer.

Three variants share one interface:

* ``base``    - identity, no parameters;
* ``cityid``  - a learnable per-city embedding that backbones concatenate to
  their inputs (see :func:`cityid_augment`);
* ``citymem`` - the embedding plus a shared K-slot memory bank read by
  attention and fused into hidden states through a gated residual.

Hidden states are ``(..., T, N, d_h)`` for node-level backbones and
``(..., T, d_h)`` for backbones without a node axis.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .nn import Linear, Module, uniform_fan_in, zeros_param
from .tensor import ShapeError, Tensor

VARIANTS = ("base", "cityid", "citymem")
POOLINGS = ("mean", "max")


@dataclass(frozen=True)
class CityCondConfig:
    variant: str = "citymem"
    d_c: int = 16
    K: int = 8
    d_m: int = 32
    pooling: str = "mean"
    use_city_embedding_in_query: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.d_c < 0:
            raise ValueError("d_c must be >= 0")
        if self.K < 1 or self.d_m < 1:
            raise ValueError("K and d_m must be positive")

    @property
    def uses_embedding(self) -> bool:
        return self.variant != "base" and self.d_c > 0

    @property
    def uses_memory(self) -> bool:
        return self.variant == "citymem"

    def to_dict(self) -> dict:
        return asdict(self)


class CityEmbeddingTable(Module):
    def __init__(self, num_cities: int, d_c: int, rng: np.random.Generator):
        if num_cities < 1:
            raise ValueError("num_cities must be positive")
        self.num_cities = num_cities
        self.d_c = d_c
        self.table = Tensor(rng.uniform(-0.1, 0.1, size=(num_cities, d_c)), requires_grad=True)

    def lookup(self, c: int) -> Tensor:
        if not 0 <= int(c) < self.num_cities:
            raise IndexError(f"city index {c} out of range [0, {self.num_cities})")
        return T.embedding(self.table, int(c))


class MemoryBank(Module):
    def __init__(self, K: int, d_m: int, rng: np.random.Generator):
        self.K = K
        self.d_m = d_m
        self.M = Tensor(rng.uniform(-0.1, 0.1, size=(K, d_m)), requires_grad=True)


class QueryNetwork(Module):
    """Two-layer tanh MLP from ``[e_c; h_t]`` to a memory-space query."""

    def __init__(self, d_c: int, d_h: int, d_m: int, rng: np.random.Generator,
                 use_city_embedding: bool = True, d_q: int | None = None):
        self.d_c = d_c
        self.use_city_embedding = use_city_embedding
        d_q = d_m if d_q is None else d_q
        self.hidden = Linear(d_c + d_h, d_q, rng)
        self.out = Linear(d_q, d_m, rng)

    def __call__(self, e_c: Tensor | None, h_t: Tensor) -> Tensor:
        lead = h_t.shape[:-1]
        if self.d_c == 0:
            inp = h_t
        else:
            if e_c is None or not self.use_city_embedding:
                e_part = Tensor(np.zeros(lead + (self.d_c,)))
            else:
                e_part = T.broadcast_to(e_c, lead + (self.d_c,))
            inp = T.concat([e_part, h_t], axis=-1)
        return self.out(T.tanh(self.hidden(inp)))


class FusionGate(Module):
    def __init__(self, d_h: int, d_m: int, rng: np.random.Generator):
        self.W_g = uniform_fan_in(rng, d_h + d_m, (d_h + d_m, d_h))
        self.W_m = zeros_param((d_m, d_h))


def cityid_augment(x: Tensor, c: int, table: CityEmbeddingTable) -> Tensor:
    """Concatenate the city embedding onto the trailing feature axis of ``x``."""
    if x.ndim < 1:
        raise ShapeError("cityid_augment needs a trailing feature axis")
    e = table.lookup(c)
    if table.d_c == 0:
        return x
    return T.concat([x, T.broadcast_to(e, x.shape[:-1] + (table.d_c,))], axis=-1)


def pool_hidden(h: Tensor, pooling: str = "mean", has_nodes: bool = True) -> Tensor:
    """Collapse the node axis (second to last) by mean or max pooling."""
    if not has_nodes:
        return h
    if h.ndim < 2 or h.shape[-2] == 0:
        raise ShapeError(f"pool_hidden needs a non-empty node axis, got {h.shape}")
    if pooling == "mean":
        return T.mean(h, axis=-2)
    if pooling == "max":
        return T.max_(h, axis=-2)
    raise ValueError(f"unknown pooling {pooling!r}")


def memory_read(e_c: Tensor | None, h_t: Tensor, bank: MemoryBank,
                query: QueryNetwork) -> tuple[Tensor, Tensor]:
    """Attention readout of the memory bank; returns (readout, weights)."""
    q = query(e_c, h_t)
    if q.shape[-1] != bank.d_m:
        raise ShapeError(f"query width {q.shape[-1]} != slot width {bank.d_m}")
    alpha = T.softmax(q @ T.transpose(bank.M), axis=-1)
    return alpha @ bank.M, alpha


def gated_fuse(h: Tensor, m_t: Tensor, gate: FusionGate, has_nodes: bool = True) -> Tensor:
    """``h + sigmoid([h; m] W_g) * (m W_m)`` with ``m`` broadcast over nodes."""
    time_shape = h.shape[:-2] if has_nodes else h.shape[:-1]
    if m_t.shape[:-1] != time_shape:
        raise ShapeError(f"gated_fuse: hidden {h.shape} and readout {m_t.shape} disagree on time axes")
    d_m = m_t.shape[-1]
    residual = m_t @ gate.W_m
    if has_nodes:
        nodes = h.shape[-2]
        m_b = T.broadcast_to(T.reshape(m_t, time_shape + (1, d_m)), time_shape + (nodes, d_m))
        residual = T.reshape(residual, time_shape + (1, h.shape[-1]))
    else:
        m_b = m_t
    g = T.sigmoid(T.concat([h, m_b], axis=-1) @ gate.W_g)
    return h + g * residual


def count_citycond_params(variant: str, num_cities: int, d_c: int, K: int, d_m: int,
                          d_h: int, d_q: int | None = None) -> int:
    """Closed-form parameter count of a :class:`CityCondLayer`."""
    if variant == "base":
        return 0
    emb = num_cities * d_c
    if variant == "cityid":
        return emb
    d_q = d_m if d_q is None else d_q
    query = (d_c + d_h) * d_q + d_q + d_q * d_m + d_m
    return emb + K * d_m + query + (d_h + d_m) * d_h + d_m * d_h


class CityCondLayer(Module):
    def __init__(self, config: CityCondConfig, num_cities: int, d_h: int, rng: np.random.Generator):
        self.config = config
        self.num_cities = num_cities
        self.d_h = d_h
        self.embedding = CityEmbeddingTable(num_cities, config.d_c, rng) if config.uses_embedding else None
        if config.uses_memory:
            self.bank = MemoryBank(config.K, config.d_m, rng)
            self.query = QueryNetwork(config.d_c, d_h, config.d_m, rng, config.use_city_embedding_in_query)
            self.gate = FusionGate(d_h, config.d_m, rng)
        else:
            self.bank = self.query = self.gate = None

    @property
    def d_c(self) -> int:
        return self.config.d_c if self.embedding is not None else 0

    def embed(self, c: int) -> Tensor | None:
        if self.embedding is None:
            if not 0 <= int(c) < self.num_cities:
                raise IndexError(f"city index {c} out of range [0, {self.num_cities})")
            return None
        return self.embedding.lookup(c)

    def augment(self, x: Tensor, c: int) -> Tensor:
        if self.embedding is None:
            return x
        return cityid_augment(x, c, self.embedding)

    def __call__(self, c: int, h: Tensor, has_nodes: bool = True) -> tuple[Tensor, Tensor | None]:
        """Return the conditioned hidden state and the slot attention (or None)."""
        if not self.config.uses_memory:
            return h, None
        e_c = self.embed(c)
        pooled = pool_hidden(h, self.config.pooling, has_nodes)
        m_t, alpha = memory_read(e_c, pooled, self.bank, self.query)
        return gated_fuse(h, m_t, self.gate, has_nodes), alpha

    def expected_parameters(self) -> int:
        cfg = self.config
        return count_citycond_params(cfg.variant, self.num_cities, self.d_c, cfg.K, cfg.d_m, self.d_h)
