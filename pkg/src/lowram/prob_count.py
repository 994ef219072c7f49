"""Morris-style probabilistic counters in one byte.

A counter starts at level 1 and moves up one level with probability
``base**-level``. The estimate ``(base**C - base) / (base - 1)`` is unbiased for
the number of increments seen.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import ParameterError

MIN_LEVEL = 1
MAX_LEVEL = 255
DEFAULT_BASE = 1.1


def _check_base(base: float) -> None:
    if not (base > 1 and math.isfinite(base)):
        raise ParameterError(f"counter base must be a finite value > 1, got {base!r}")


def increment_probability(level: int, base: float) -> float:
    return base ** -level


def estimate(level: int, base: float = DEFAULT_BASE) -> float:
    """Approximate count represented by ``level``; 0 for a fresh counter."""
    return (base ** level - base) / (base - 1.0)


def increment_level(level: int, base: float, u: float) -> int:
    """Next level given a uniform draw ``u``. Saturated counters stay put."""
    if level >= MAX_LEVEL:
        return level
    if u < base ** -level:
        return level + 1
    return level


class MorrisCounter:
    """A single probabilistic counter.

    The base is normally shared model-wide; it lives here only so a standalone
    counter can estimate itself.
    """

    __slots__ = ("level", "base", "saturated")

    def __init__(self, base: float = DEFAULT_BASE, level: int = MIN_LEVEL):
        _check_base(base)
        if not MIN_LEVEL <= level <= MAX_LEVEL:
            raise ParameterError(f"counter level must lie in [{MIN_LEVEL}, {MAX_LEVEL}], got {level}")
        self.base = base
        self.level = int(level)
        self.saturated = level >= MAX_LEVEL

    def increment(self, rng: np.random.Generator) -> bool:
        """Apply one increment; returns True if the level moved."""
        if self.level >= MAX_LEVEL:
            self.saturated = True
            return False
        new = increment_level(self.level, self.base, rng.random())
        moved = new != self.level
        self.level = new
        self.saturated = new >= MAX_LEVEL
        return moved

    def estimate(self) -> float:
        return estimate(self.level, self.base)

    def __repr__(self):
        return f"MorrisCounter(level={self.level}, base={self.base})"


def simulate_levels(t: int, trials: int, base: float, rng: np.random.Generator) -> np.ndarray:
    """Final levels of ``trials`` independent counters after ``t`` increments each.

    Runs the same per-increment rule as :func:`increment_level`, vectorised over
    trials.
    """
    _check_base(base)
    levels = np.full(trials, MIN_LEVEL, dtype=np.int64)
    for _ in range(t):
        u = rng.random(trials)
        bump = (u < base ** -levels.astype(np.float64)) & (levels < MAX_LEVEL)
        levels += bump
    return levels.astype(np.uint8)


def estimate_array(levels, base: float) -> np.ndarray:
    levels = np.asarray(levels, dtype=np.float64)
    return (base ** levels - base) / (base - 1.0)


class CounterBounds(NamedTuple):
    lower: float
    upper: float
    lower_failure_prob: float
    upper_failure_prob: float


def check_bounds(t: float, T: float, c: float, base: float) -> CounterBounds:
    """High-probability thresholds for the estimate after ``t`` of ``T`` increments.

    ``P[estimate < lower] <= T**-(c-1)`` and ``P[estimate > upper] <= T**-c``.
    Logarithms are natural unless written ``log_base``.
    """
    _check_base(base)
    if not c > 0:
        raise ParameterError(f"confidence parameter must be positive, got {c!r}")
    if T < 2:
        raise ParameterError(f"horizon must be at least 2, got {T!r}")
    if not 0 <= t <= T:
        raise ParameterError(f"need 0 <= t <= T, got t={t!r}, T={T!r}")
    log_t = math.log(T)
    lower = t / (base * c * log_t) - 1.0
    exponent = math.sqrt(2.0 * c * log_t / math.log(base)) + 2.0
    upper = math.e * t / (base - 1.0) * base ** exponent
    return CounterBounds(lower, upper, T ** -(c - 1.0), T ** -c)
