"""Central finite-difference checks for the autodiff tape."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), with 0 when both vanish."""
    diff = np.linalg.norm(np.ravel(analytic - numeric))
    scale = max(np.linalg.norm(np.ravel(analytic)), np.linalg.norm(np.ravel(numeric)))
    if scale == 0.0:
        return 0.0
    return float(diff / scale)


def numerical_grad(loss_fn: Callable[[], Tensor], param: Tensor, step: float = 1e-5,
                   indices: Sequence[tuple[int, ...]] | None = None) -> np.ndarray:
    """Central differences of the scalar ``loss_fn()`` w.r.t. ``param``.

    ``param.data`` is perturbed in place and restored. When ``indices`` is
    given only those entries are probed; the rest of the result stays zero.
    """
    grad = np.zeros_like(param.data)
    flat_idx = indices if indices is not None else list(np.ndindex(param.shape))
    for idx in flat_idx:
        orig = param.data[idx]
        param.data[idx] = orig + step
        up = loss_fn().item()
        param.data[idx] = orig - step
        down = loss_fn().item()
        param.data[idx] = orig
        grad[idx] = (up - down) / (2.0 * step)
    return grad


def check_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> float:
    """Largest relative error between tape and finite-difference gradients."""
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = max(worst, relative_error(analytic, numerical_grad(loss_fn, p, step)))
    return worst


def spot_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], rng: np.random.Generator,
               count: int = 5, step: float = 1e-5) -> list[float]:
    """Probe ``count`` random scalar parameters; return per-probe relative errors.

    Each probe compares one analytic partial derivative with its central
    difference. Probes whose derivatives are both below 1e-10 count as exact.
    """
    analytic, numeric = probe_gradients(loss_fn, params, rng, count, step)
    errors = []
    for a, n in zip(analytic, numeric):
        scale = max(abs(a), abs(n))
        errors.append(0.0 if scale < 1e-10 else float(abs(a - n) / scale))
    return errors


def probe_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], rng: np.random.Generator,
                    count: int = 5, step: float = 1e-5, per_param: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Analytic and central-difference partials at randomly chosen entries.

    ``count`` entries are drawn with probability proportional to tensor size,
    then ``per_param`` more from every tensor so small ones are never skipped.
    """
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    sizes = np.array([p.size for p in params], dtype=float)
    picks = [int(rng.choice(len(params), p=sizes / sizes.sum())) for _ in range(count)]
    picks += [i for i in range(len(params)) for _ in range(per_param)]
    analytic, numeric = [], []
    for which in picks:
        p = params[which]
        idx = tuple(int(rng.integers(n)) for n in p.shape)
        analytic.append(0.0 if p.grad is None else float(p.grad[idx]))
        numeric.append(float(numerical_grad(loss_fn, p, step, [idx])[idx]))
    return np.array(analytic), np.array(numeric)
