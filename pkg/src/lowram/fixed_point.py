"""Qn.m fixed-point grids and unbiased randomized rounding.

A value on a Qn.m grid is stored as a signed integer ``raw`` and decoded by a
single multiplication with the resolution ``eps = 2**-m``. Grids are always
powers of two, so a coarse grid is a subset of every finer one.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GridRangeError, ParameterError, PrecisionError

MAX_FRACTION_BITS = 62

_QSPEC = re.compile(r"^[qQ](\d+)\.(\d+)$")


def grid_resolution(m: int) -> float:
    """Return ``2**-m`` exactly."""
    if isinstance(m, bool) or int(m) != m or not 0 <= m <= MAX_FRACTION_BITS:
        raise ParameterError(f"fraction bits must be an integer in [0, {MAX_FRACTION_BITS}], got {m!r}")
    return math.ldexp(1.0, -int(m))


def floor_pow2(x: float) -> tuple[float, int]:
    """Largest power of two ``2**e <= x`` as ``(value, e)`` for finite ``x > 0``."""
    if not (x > 0 and math.isfinite(x)):
        raise ParameterError(f"floor_pow2 needs a finite positive value, got {x!r}")
    mant, exp = math.frexp(x)  # x = mant * 2**exp with 0.5 <= mant < 1
    e = exp - 1
    return math.ldexp(1.0, e), e


@dataclass(frozen=True)
class GridSpec:
    """A Qn.m grid: ``n`` integer bits, ``m`` fraction bits and a sign bit."""

    n: int
    m: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 0:
            raise ParameterError(f"integer bits must be a non-negative integer, got {self.n!r}")
        if self.n + self.m > MAX_FRACTION_BITS:
            raise ParameterError("n + m must not exceed 62 bits")
        grid_resolution(self.m)

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        """Parse ``'q2.13'`` style names."""
        match = _QSPEC.match(text.strip())
        if not match:
            raise ParameterError(f"not a Qn.m grid name: {text!r}")
        return cls(int(match.group(1)), int(match.group(2)))

    @property
    def eps(self) -> float:
        return grid_resolution(self.m)

    @property
    def K(self) -> int:
        """Bits per stored value, sign included."""
        return self.n + self.m + 1

    @property
    def max_raw(self) -> int:
        return (1 << (self.n + self.m)) - 1

    @property
    def max_value(self) -> float:
        return self.max_raw * self.eps

    def __str__(self):
        return f"q{self.n}.{self.m}"


@dataclass(frozen=True)
class GridValue:
    raw: int
    spec: GridSpec

    @property
    def value(self) -> float:
        return decode(self)


def round_with_uniform(beta: float, eps: float, u: float) -> float:
    """Randomized rounding of ``beta`` to the ``eps`` grid driven by a uniform draw ``u``.

    Returns the upper neighbour when ``u < (beta - lower) / eps``. On-grid inputs
    come back unchanged whatever ``u`` is.
    """
    q = beta / eps
    lo = math.floor(q)
    frac = q - lo
    if frac == 0.0:
        return beta
    if u < frac:
        lo += 1
    return lo * eps


def random_round(beta: float, eps: float, rng: np.random.Generator) -> float:
    """Round ``beta`` to a neighbouring multiple of ``eps`` with mean exactly ``beta``."""
    if not math.isfinite(beta):
        raise DomainError(f"cannot round non-finite value {beta!r}")
    if not eps > 0:
        raise ParameterError(f"resolution must be positive, got {eps!r}")
    return round_with_uniform(beta, eps, rng.random())


def random_round_raw(beta: float, eps: float, u: float) -> int:
    """Like :func:`round_with_uniform` but returns the integer multiple of ``eps``."""
    q = beta / eps
    lo = math.floor(q)
    if u < q - lo:
        lo += 1
    return lo


def random_round_array(beta, eps: float, rng: np.random.Generator, u=None) -> np.ndarray:
    """Vectorised rounding; returns the integer multiples (``int64``) of ``eps``.

    Supply ``u`` to reuse a fixed set of uniforms (one per coefficient).
    """
    beta = np.asarray(beta, dtype=np.float64)
    if not np.all(np.isfinite(beta)):
        raise DomainError("cannot round non-finite coefficients")
    if not eps > 0:
        raise ParameterError(f"resolution must be positive, got {eps!r}")
    q = beta / eps
    lo = np.floor(q)
    if u is None:
        u = rng.random(beta.shape)
    raw = lo + (u < (q - lo))
    return raw.astype(np.int64)


def encode(value: float, spec: GridSpec) -> GridValue:
    """Exact encoding of an on-grid value; never rounds."""
    if not math.isfinite(value):
        raise DomainError(f"cannot encode non-finite value {value!r}")
    q = value / spec.eps
    if q != math.floor(q):
        raise PrecisionError(f"{value!r} is not a multiple of {spec.eps!r} ({spec})")
    raw = int(q)
    if abs(raw) > spec.max_raw:
        raise GridRangeError(f"{value!r} outside the {spec} range +/-{spec.max_value!r}")
    return GridValue(raw, spec)


def decode(gv: GridValue) -> float:
    return gv.raw * gv.spec.eps


def to_twos_complement(raw, bits: int) -> np.ndarray:
    """Map signed integers to their ``bits``-wide two's-complement codes."""
    raw = np.asarray(raw, dtype=np.int64)
    return (raw & ((1 << bits) - 1)).astype(np.uint64)


def from_twos_complement(codes, bits: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.uint64).astype(np.int64)
    sign = np.int64(1) << (bits - 1)
    return np.where(codes & sign, codes - (np.int64(1) << bits), codes)
