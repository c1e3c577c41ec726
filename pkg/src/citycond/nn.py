"""Parameter containers and the small set of layers the backbones are built from."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...], name: str = "") -> Tensor:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def zeros_param(shape: tuple[int, ...], name: str = "") -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


class Module:
    """Owns trainable tensors; sub-modules and parameters are found by attribute walk."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in self.__dict__.items():
            yield from _walk(value, f"{prefix}{key}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {state[name].shape} vs {p.shape}")
            p.data[...] = state[name]


def _walk(value, name: str):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=name + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}")
    elif isinstance(value, dict):
        for k, v in value.items():
            yield from _walk(v, f"{name}.{k}")


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = uniform_fan_in(rng, d_in, (d_in, d_out))
        self.bias = uniform_fan_in(rng, d_in, (d_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class ConditionedLinear(Module):
    """``[x; e] @ W + b`` with ``W`` stored as separate x- and e-blocks.

    The e-block starts at zero, so at initialization the output is bitwise
    what the unconditioned ``x @ W_x + b`` produces. ``d_c == 0`` means no
    e-block at all.
    """

    def __init__(self, d_in: int, d_out: int, d_c: int, rng: np.random.Generator):
        self.proj = Linear(d_in, d_out, rng)
        self.cond_weight = zeros_param((d_c, d_out)) if d_c > 0 else None

    @property
    def conditioning_parameters(self) -> int:
        return 0 if self.cond_weight is None else self.cond_weight.size

    def __call__(self, x: Tensor, e: Tensor | None = None) -> Tensor:
        y = self.proj(x)
        if self.cond_weight is None or e is None:
            return y
        return y + e.reshape(1, -1) @ self.cond_weight


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class GRURecurrence(Module):
    """GRU recurrence over precomputed input gates ``gx`` of shape (B, T, 3*d_h)."""

    def __init__(self, d_h: int, rng: np.random.Generator):
        self.d_h = d_h
        self.w_h = uniform_fan_in(rng, d_h, (d_h, 3 * d_h))

    def __call__(self, gx: Tensor) -> Tensor:
        B, steps, _ = gx.shape
        d = self.d_h
        h = T.zeros(B, d)
        outs = []
        for t in range(steps):
            g = gx[:, t]
            gh = h @ self.w_h
            r = T.sigmoid(g[:, :d] + gh[:, :d])
            z = T.sigmoid(g[:, d:2 * d] + gh[:, d:2 * d])
            n = T.tanh(g[:, 2 * d:] + r * gh[:, 2 * d:])
            h = (1.0 - z) * n + z * h
            outs.append(h)
        return T.stack(outs, axis=1)


class LSTMCell(Module):
    def __init__(self, d_in: int, d_h: int, rng: np.random.Generator, d_c: int = 0):
        self.d_h = d_h
        self.inp = ConditionedLinear(d_in, 4 * d_h, d_c, rng)
        self.w_h = uniform_fan_in(rng, d_h, (d_h, 4 * d_h))

    def __call__(self, x: Tensor, state: tuple[Tensor, Tensor], e: Tensor | None = None) -> tuple[Tensor, Tensor]:
        h, c = state
        d = self.d_h
        g = self.inp(x, e) + h @ self.w_h
        i = T.sigmoid(g[:, :d])
        f = T.sigmoid(g[:, d:2 * d])
        o = T.sigmoid(g[:, 2 * d:3 * d])
        cand = T.tanh(g[:, 3 * d:])
        c = f * c + i * cand
        return o * T.tanh(c), c


class MultiHeadSelfAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise ValueError(f"model width {d} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = Linear(d, 3 * d, rng)
        self.out = Linear(d, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        B, S, d = x.shape
        H = self.heads
        dk = d // H
        qkv = self.qkv(x).reshape(B, S, 3, H, dk).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dk))
        ctx = T.softmax(scores, axis=-1) @ v
        return self.out(ctx.transpose(0, 2, 1, 3).reshape(B, S, d))


class EncoderBlock(Module):
    """Pre-norm transformer encoder block."""

    def __init__(self, d: int, heads: int, ff: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadSelfAttention(d, heads, rng)
        self.norm2 = LayerNorm(d)
        self.ff1 = Linear(d, ff, rng)
        self.ff2 = Linear(ff, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ff2(T.relu(self.ff1(self.norm2(x))))


def sinusoidal_encoding(steps: int, d: int) -> np.ndarray:
    pos = np.arange(steps)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
