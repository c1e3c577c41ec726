"""Graph backbones: a message-passing GNN and an STGCN-style model."""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..errors import ContractError
from ..nn import ConditionedLinear, LayerNorm, Linear, Module, uniform_fan_in
from ..tensor import ShapeError, Tensor
from .common import Backbone


class Adjacency:
    """Nonnegative weights plus the row-normalized propagation matrix of ``A + I``."""

    def __init__(self, weights):
        w = np.array(weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ShapeError(f"adjacency must be square, got shape {w.shape}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("adjacency weights must be finite and nonnegative")
        self.weights = w
        a = w + np.eye(w.shape[0])
        self.propagation = a / a.sum(axis=1, keepdims=True)

    @property
    def num_nodes(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def from_coordinates(cls, coords, sigma: float | None = None, threshold: float = 0.1) -> "Adjacency":
        """Thresholded Gaussian kernel on pairwise node distances, no self weight."""
        xy = np.asarray(coords, dtype=np.float64)
        dist = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1))
        if sigma is None:
            off = dist[~np.eye(len(xy), dtype=bool)]
            sigma = float(off.std()) if off.size and off.std() > 0 else 1.0
        w = np.exp(-(dist / sigma) ** 2)
        w[w < threshold] = 0.0
        np.fill_diagonal(w, 0.0)
        return cls(w)

    def permuted(self, perm) -> "Adjacency":
        perm = np.asarray(perm)
        return Adjacency(self.weights[np.ix_(perm, perm)])


class GraphConv(Module):
    """``sum_k (P^k h) W_k + b`` for k = 0..hops, applied along the node axis."""

    def __init__(self, d_in: int, d_out: int, hops: int, rng):
        self.weights = [uniform_fan_in(rng, (hops + 1) * d_in, (d_in, d_out)) for _ in range(hops + 1)]
        self.bias = uniform_fan_in(rng, (hops + 1) * d_in, (d_out,))

    def __call__(self, h: Tensor, prop: Tensor | None) -> Tensor:
        out = h @ self.weights[0]
        x = h
        for w in self.weights[1:]:
            x = x if prop is None else prop @ x
            out = out + x @ w
        return out + self.bias


def _node_time(h: Tensor) -> Tensor:
    """(B, T, N, C) <-> (B, N, T, C)."""
    return h.transpose(0, 2, 1, 3)


class _GraphBackbone(Backbone):
    def _io_key(self):
        return [s[1] for s in self.city_shapes]

    def _setup_io(self):
        self.shared_io = len(set(self._io_key())) == 1

    def _propagation(self, adjacency, N: int) -> Tensor | None:
        if adjacency is False:
            return None  # message passing disabled
        if adjacency is None:
            raise ContractError(f"{self.spec.kind} backbone requires an adjacency")
        prop = adjacency.propagation if isinstance(adjacency, Adjacency) else np.asarray(adjacency)
        if prop.shape != (N, N):
            raise ShapeError(f"adjacency of shape {prop.shape} does not match {N} nodes")
        return Tensor(prop)

    def _build_readout(self, rng):
        d = self.spec.d_h
        width = self.spec.readout_mult * d
        self.readout = Linear(self.L_h * d, width, rng)
        self.outputs = [Linear(width, self.city_shapes[c][1] * self.d_x, rng) for c in self._io_cities()]

    def _readout(self, h: Tensor, c: int) -> Tensor:
        B, L, N, d = h.shape
        flat = _node_time(h).reshape(B, N, L * d)
        L_f = self.city_shapes[c][1]
        out = self.outputs[self._io_slot(c)](T.relu(self.readout(flat)))
        return out.reshape(B, N, L_f, self.d_x).transpose(0, 2, 1, 3)

    def _check_input(self, x, c):
        if x.ndim != 4:
            raise ContractError(f"expected (B, L_h, N, d_x) input, got shape {x.shape}")
        if x.shape[1] != self.L_h:
            raise ContractError(f"window length {x.shape[1]} != L_h={self.L_h}")
        self._io_slot(c)
        if x.shape[3] != self.d_x:
            raise ContractError(f"expected {self.d_x} features per node, got {x.shape[3]}")


class GNNBlock(Module):
    def __init__(self, d: int, hops: int, ff: int, rng):
        self.conv = GraphConv(d, d, hops, rng)
        self.ff1 = Linear(d, ff, rng)
        self.ff2 = Linear(ff, d, rng)

    def __call__(self, h, prop):
        g = T.relu(self.conv(h, prop))
        return g + self.ff2(T.relu(self.ff1(g)))


class GNNBackbone(_GraphBackbone):
    """Per-step message passing over the sensor graph, then a per-node temporal readout."""

    def _build(self, rng):
        self._setup_io()
        d = self.spec.d_h
        self.input = ConditionedLinear(self.d_x, d, self.citycond.d_c, rng)
        self.blocks = [GNNBlock(d, self.spec.hops, self.spec.ff_mult * d, rng) for _ in range(self.spec.layers)]
        self._build_readout(rng)

    def forward(self, x, c, adjacency=None):
        self._check_input(x, c)
        prop = self._propagation(adjacency, x.shape[2])
        h = self.input(x, self.citycond.embed(c))
        h = self.blocks[0](h, prop)
        h = self.hook(c, h)
        for block in self.blocks[1:]:
            h = block(h, prop)
        return self._readout(h, c)


class GatedTemporalConv(Module):
    """Causal temporal convolution with a GLU output, per node."""

    def __init__(self, d_in: int, d_out: int, kernel: int, rng):
        self.d_out = d_out
        self.w = uniform_fan_in(rng, kernel * d_in, (kernel, d_in, 2 * d_out))
        self.b = uniform_fan_in(rng, kernel * d_in, (2 * d_out,))

    def __call__(self, h: Tensor) -> Tensor:
        B, L, N, C = h.shape
        z = T.conv1d(_node_time(h).reshape(B * N, L, C), self.w, self.b)
        z = z.reshape(B, N, L, 2 * self.d_out)
        glu = z[..., :self.d_out] * T.sigmoid(z[..., self.d_out:])
        return _node_time(glu)


class STBlock(Module):
    """temporal conv -> graph conv -> temporal conv, then layer norm."""

    def __init__(self, d: int, kernel: int, hops: int, rng):
        self.t1 = GatedTemporalConv(d, d, kernel, rng)
        self.graph = GraphConv(d, d, hops, rng)
        self.t2 = GatedTemporalConv(d, d, kernel, rng)
        self.norm = LayerNorm(d)

    def __call__(self, h, prop):
        h = self.t1(h)
        h = T.relu(self.graph(h, prop))
        return self.norm(self.t2(h))


class STGCNBackbone(_GraphBackbone):
    def _build(self, rng):
        self._setup_io()
        d = self.spec.d_h
        self.input = ConditionedLinear(self.d_x, d, self.citycond.d_c, rng)
        self.blocks = [STBlock(d, self.spec.kernel, self.spec.hops, rng) for _ in range(self.spec.layers)]
        self._build_readout(rng)

    def forward(self, x, c, adjacency=None):
        self._check_input(x, c)
        prop = self._propagation(adjacency, x.shape[2])
        h = self.input(x, self.citycond.embed(c))
        h = self.blocks[0](h, prop)
        h = self.hook(c, h)
        for block in self.blocks[1:]:
            h = block(h, prop)
        return self._readout(h, c)
