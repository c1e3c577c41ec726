"""Backbones without a graph: GRU and TCN over flattened sensors, and a
transformer encoder over (time, node-block) tokens."""

from __future__ import annotations

import math

import numpy as np

from .. import tensor as T
from ..nn import ConditionedLinear, EncoderBlock, GRURecurrence, LayerNorm, Linear, Module, sinusoidal_encoding, uniform_fan_in
from ..tensor import Tensor
from .common import Backbone


class GRUBackbone(Backbone):
    """Two stacked GRU layers over per-step vectors of all N*d_x sensor values."""

    has_nodes_at_hook = False

    def _build(self, rng):
        d = self.spec.d_h
        d_c = self.citycond.d_c
        self.inputs = [ConditionedLinear(self.city_shapes[c][0] * self.d_x, 3 * d, d_c, rng) for c in self._io_cities()]
        self.layer1 = GRURecurrence(d, rng)
        self.rest = [(Linear(d, 3 * d, rng), GRURecurrence(d, rng)) for _ in range(self.spec.layers - 1)]
        self.heads = [Linear(d, L_f * N * self.d_x, rng) for N, L_f in (self.city_shapes[c] for c in self._io_cities())]

    def forward(self, x, c, adjacency=None):
        self._check_input(x, c)
        B, L, N, dx = x.shape
        slot = self._io_slot(c)
        h = self.layer1(self.inputs[slot](x.reshape(B, L, N * dx), self.citycond.embed(c)))
        h = self.hook(c, h)
        for proj, rec in self.rest:
            h = rec(proj(h))
        L_f = self.city_shapes[c][1]
        return self.heads[slot](h[:, -1]).reshape(B, L_f, N, dx)


class TemporalBlock(Module):
    """Two dilated causal convolutions with a residual connection."""

    def __init__(self, d: int, kernel: int, dilation: int, rng):
        self.dilation = dilation
        self.w1 = uniform_fan_in(rng, kernel * d, (kernel, d, d))
        self.b1 = uniform_fan_in(rng, kernel * d, (d,))
        self.w2 = uniform_fan_in(rng, kernel * d, (kernel, d, d))
        self.b2 = uniform_fan_in(rng, kernel * d, (d,))

    def __call__(self, x: Tensor) -> Tensor:
        y = T.relu(T.conv1d(x, self.w1, self.b1, self.dilation))
        y = T.conv1d(y, self.w2, self.b2, self.dilation)
        return T.relu(x + y)


class TCNBackbone(Backbone):
    has_nodes_at_hook = False

    def _build(self, rng):
        d = self.spec.d_h
        d_c = self.citycond.d_c
        self.inputs = [ConditionedLinear(self.city_shapes[c][0] * self.d_x, d, d_c, rng) for c in self._io_cities()]
        self.blocks = [TemporalBlock(d, self.spec.kernel, dil, rng) for dil in self.spec.dilations]
        self.heads = [Linear(d, L_f * N * self.d_x, rng) for N, L_f in (self.city_shapes[c] for c in self._io_cities())]

    def forward(self, x, c, adjacency=None):
        self._check_input(x, c)
        B, L, N, dx = x.shape
        slot = self._io_slot(c)
        h = self.inputs[slot](x.reshape(B, L, N * dx), self.citycond.embed(c))
        h = self.blocks[0](h)
        h = self.hook(c, h)
        for block in self.blocks[1:]:
            h = block(h)
        L_f = self.city_shapes[c][1]
        return self.heads[slot](h[:, -1]).reshape(B, L_f, N, dx)


class TransformerBackbone(Backbone):
    """Encoder-only transformer over one token per (time step, node block).

    Nodes are split into ``node_blocks`` contiguous groups (zero-padded to
    equal size); each group's features at one step are linearly patched into
    a token. The hook pools the block tokens of each step.
    """

    def _build(self, rng):
        d = self.spec.d_h
        d_c = self.citycond.d_c
        P = self.spec.node_blocks
        self.block_sizes = [math.ceil(self.city_shapes[c][0] / P) for c in self._io_cities()]
        self.patches = [ConditionedLinear(bs * self.d_x, d, d_c, rng) for bs in self.block_sizes]
        self.block_embedding = Tensor(rng.normal(0.0, 0.02, size=(P, d)), requires_grad=True)
        self.blocks = [EncoderBlock(d, self.spec.heads, self.spec.ff_mult * d, rng) for _ in range(self.spec.layers)]
        self.norm = LayerNorm(d)
        self.heads = [Linear(d, self.city_shapes[c][1] * bs * self.d_x, rng)
                      for c, bs in zip(self._io_cities(), self.block_sizes)]
        self._pe = sinusoidal_encoding(self.L_h, d)[:, None, :]

    def forward(self, x, c, adjacency=None):
        self._check_input(x, c)
        B, L, N, dx = x.shape
        slot = self._io_slot(c)
        P = self.spec.node_blocks
        bs = self.block_sizes[slot]
        d = self.spec.d_h
        if P * bs > N:
            x = T.concat([x, Tensor(np.zeros((B, L, P * bs - N, dx)))], axis=2)
        tokens = self.patches[slot](x.reshape(B, L, P, bs * dx), self.citycond.embed(c))
        h = (tokens + Tensor(self._pe) + self.block_embedding).reshape(B, L * P, d)
        h = self.blocks[0](h)
        h = self.hook(c, h.reshape(B, L, P, d)).reshape(B, L * P, d)
        for block in self.blocks[1:]:
            h = block(h)
        last = self.norm(h.reshape(B, L, P, d)[:, -1])
        L_f = self.city_shapes[c][1]
        out = self.heads[slot](last).reshape(B, P, L_f, bs, dx).transpose(0, 2, 1, 3, 4)
        out = out.reshape(B, L_f, P * bs, dx)
        return out if P * bs == N else out[:, :, :N]
