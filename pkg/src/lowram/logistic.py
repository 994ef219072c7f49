"""Logistic prediction, loss, and prediction-time rounding error bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .errors import ParameterError


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def softplus(z: float) -> float:
    """``log(1 + exp(z))`` without overflow."""
    if z > 0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


def margin(weights, indices: Sequence[int], values: Sequence[float] | None = None) -> float:
    """``beta . x`` for a sparse ``x``; ``weights`` is a mapping or an array."""
    if isinstance(weights, Mapping):
        get = weights.get
        if values is None:
            return math.fsum(get(i, 0.0) for i in indices)
        return math.fsum(get(i, 0.0) * v for i, v in zip(indices, values))
    w = np.asarray(weights, dtype=np.float64)
    idx = np.asarray(indices, dtype=np.int64)
    if values is None:
        return math.fsum(w[idx])
    return math.fsum(w[idx] * np.asarray(values, dtype=np.float64))


def predict(weights, indices, values=None) -> float:
    return sigmoid(margin(weights, indices, values))


def loss_from_margin(z: float, y: int) -> float:
    """Logistic loss in nats for margin ``z`` and label ``y`` in {0, 1}."""
    return softplus(-z) if y == 1 else softplus(z)


def loss(indices, y: int, weights, values=None) -> float:
    if y not in (0, 1):
        raise ParameterError(f"label must be 0 or 1, got {y!r}")
    return loss_from_margin(margin(weights, indices, values), y)


def loss_from_margin_array(z, y) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y)
    s = np.where(y == 1, -z, z)
    return np.logaddexp(0.0, s)


def sigmoid_array(z) -> np.ndarray:
    return expit(np.asarray(z, dtype=np.float64))


def loss_increase(z, z_hat, y) -> np.ndarray:
    """``loss(z_hat) - loss(z)`` computed without cancellation.

    For ``y = 1`` an increase is ``log1p(sigmoid(-z) * expm1(z - z_hat))``; a
    decrease is evaluated with the roles swapped so ``log1p`` never sees an
    argument near -1. ``y = 0`` mirrors the margins.
    """
    z = np.asarray(z, dtype=np.float64)
    z_hat = np.asarray(z_hat, dtype=np.float64)
    y = np.asarray(y)
    sign = np.where(y == 1, 1.0, -1.0)
    a = sign * z
    b = sign * z_hat
    up = a >= b
    lo = np.where(up, a, b)
    hi_shift = np.abs(a - b)
    mag = np.log1p(sigmoid_array(-lo) * np.expm1(hi_shift))
    return np.where(up, mag, -mag)


def expected_relative_bound(eps: float, k: int) -> float:
    """Expected relative loss increase bound for unbiased rounding at resolution ``eps``."""
    return 2.0 * math.sqrt(2.0 * math.pi * k) * math.exp(eps * eps * k / 2.0) * eps


@dataclass(frozen=True)
class LossBounds:
    delta: float
    additive_bound: float
    relative_bound: float | None
    apriori_additive: float
    expected_relative_bound: float
    realized_additive: float
    realized_relative: float | None


def error_bounds(beta, beta_hat, indices, y: int, eps: float, k: int | None = None,
                 values=None) -> LossBounds:
    """Bounds on the loss change from replacing ``beta`` by ``beta_hat`` on one example.

    ``relative_bound`` and ``realized_relative`` are None when the reference loss
    is zero (relative error undefined).
    """
    if values is not None and any(v not in (0, 1) for v in values):
        raise ParameterError("error bounds require binary features")
    if y not in (0, 1):
        raise ParameterError(f"label must be 0 or 1, got {y!r}")
    if values is not None:
        indices = [i for i, v in zip(indices, values) if v]
    indices = list(indices)
    if k is None:
        k = len(indices)
    z = margin(beta, indices)
    diff = margin(_difference(beta, beta_hat, indices), indices)
    delta = abs(diff)
    base = loss_from_margin(z, y)
    realized = float(loss_increase(z, z - diff, y))
    if base > 0:
        relative_bound = math.expm1(delta)
        realized_rel = realized / base
    else:
        relative_bound = None
        realized_rel = None
    return LossBounds(
        delta=delta,
        additive_bound=delta,
        relative_bound=relative_bound,
        apriori_additive=eps * len(indices),
        expected_relative_bound=expected_relative_bound(eps, k),
        realized_additive=realized,
        realized_relative=realized_rel,
    )


def _difference(beta, beta_hat, indices):
    if isinstance(beta, Mapping) or isinstance(beta_hat, Mapping):
        return {i: _get(beta, i) - _get(beta_hat, i) for i in indices}
    return np.asarray(beta, dtype=np.float64) - np.asarray(beta_hat, dtype=np.float64)


def _get(weights, i):
    if isinstance(weights, Mapping):
        return weights.get(i, 0.0)
    return float(weights[i])


def logistic_gradient(indices, y: int, weights, values=None) -> dict[int, float]:
    """Per-coordinate gradient ``(sigmoid(beta . x) - y) * x_i``."""
    p = predict(weights, indices, values)
    if values is None:
        return {i: p - y for i in indices}
    return {i: (p - y) * v for i, v in zip(indices, values)}
