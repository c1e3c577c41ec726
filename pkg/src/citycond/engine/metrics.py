"""Forecast error metrics on plain arrays."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ContractError


def _check(pred: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ContractError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.size == 0:
        raise ContractError("cannot score an empty split")
    return pred, target


def traffic_metrics(pred, target) -> tuple[float, float]:
    """(MSE, MAE) averaged over every element."""
    pred, target = _check(pred, target)
    err = pred - target
    return float(np.mean(err * err)), float(np.mean(np.abs(err)))


def trajectory_metrics(pred, target) -> tuple[float, float]:
    """(ADE, FDE) for ``(..., L_f, A, 2)`` positions.

    ADE averages the Euclidean error over every step and agent; FDE uses the
    last step only.
    """
    pred, target = _check(pred, target)
    if pred.ndim < 3 or pred.shape[-1] != 2:
        raise ContractError(f"trajectory arrays must be (..., L_f, A, 2), got {pred.shape}")
    dist = np.sqrt(np.sum((pred - target) ** 2, axis=-1))
    return float(np.mean(dist)), float(np.mean(dist[..., -1, :]))


class RunningMetric:
    """Exact streaming mean of ``sum``/``count`` pairs over batches."""

    def __init__(self):
        self.total = 0.0
        self.count = 0

    def add(self, total: float, count: int) -> None:
        self.total += total
        self.count += count

    @property
    def value(self) -> float:
        if self.count == 0:
            raise ContractError("cannot score an empty split")
        return self.total / self.count


def mean_std(values) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation; a single value has std 0."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("mean_std of an empty sequence")
    mean = math.fsum(vals) / len(vals)
    if len(vals) == 1:
        return mean, 0.0
    dev = [v - mean for v in vals]
    scale = max(abs(d) for d in dev)
    if scale == 0.0:
        return mean, 0.0
    # scaled so that squaring cannot overflow for huge magnitudes
    var = math.fsum((d / scale) ** 2 for d in dev) / (len(vals) - 1)
    return mean, scale * math.sqrt(var)
