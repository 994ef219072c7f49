"""Online gradient descent with randomized rounding and per-coordinate rates.

``OneDimOGD`` is the single-coordinate algorithm; ``OGDTrainer`` runs one copy
of it per feature for logistic regression on sparse binary examples, storing
coefficients (and optionally counters) in a packed open-addressing table.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import prob_count
from .errors import ConfigError
from .fixed_point import GridSpec, floor_pow2, grid_resolution, random_round_raw, round_with_uniform
from .hashtable import CoordinateTable
from .logistic import sigmoid

log = logging.getLogger(__name__)

MODES = ("control", "fixed", "adaptive")
COUNTERS = ("global", "exact", "morris")

_UNIFORM_BLOCK = 4096


def alpha_exact_count(R: float, G: float = 1.0, gamma: float = 0.0) -> float:
    """``sqrt(2) R / sqrt(G^2 + gamma^2)``, the exact-count regret-optimal scale."""
    return math.sqrt(2.0) * R / math.sqrt(G * G + gamma * gamma)


def alpha_approx_count(R: float, G: float = 1.0, gamma: float = 0.0) -> float:
    """``R / sqrt(G^2 + gamma^2)``, the scale used with approximate counts."""
    return R / math.sqrt(G * G + gamma * gamma)


def _is_pow2(x: float) -> bool:
    if not (x > 0 and math.isfinite(x)):
        return False
    return math.frexp(x)[0] == 0.5


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run.

    ``mode`` selects coefficient storage: ``control`` (float32), ``fixed``
    (Qn.m with ``n``/``m``) or ``adaptive`` (grid resolution tied to the
    learning rate by ``gamma``; ``gamma=0`` disables rounding and stores
    float64). ``counter`` selects the learning-rate schedule: ``global``
    (``alpha/sqrt(t)`` over examples), ``exact`` per-coordinate counts, or
    ``morris`` 8-bit probabilistic counts with base ``base``.
    """

    mode: str = "control"
    counter: str = "global"
    alpha: float = 0.1
    gamma: float = 1.0
    R: float = 2.0
    G: float = 1.0
    n: int = 2
    m: int = 13
    base: float = prob_count.DEFAULT_BASE
    max_m: int = 30
    project: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.counter not in COUNTERS:
            raise ConfigError(f"counter must be one of {COUNTERS}, got {self.counter!r}")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ConfigError(f"alpha must be positive, got {self.alpha!r}")
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ConfigError(f"gamma must be non-negative, got {self.gamma!r}")
        if not self.G > 0:
            raise ConfigError(f"G must be positive, got {self.G!r}")
        if self.counter == "morris" and not self.base > 1:
            raise ConfigError(f"counter base must exceed 1, got {self.base!r}")
        if not _is_pow2(self.R):
            raise ConfigError(f"R must be a power of two, got {self.R!r}")
        if self.n < 0 or self.R >= 2.0 ** self.n:
            raise ConfigError(f"R={self.R} is not representable with n={self.n} integer bits")
        if self.mode == "fixed":
            spec = GridSpec(self.n, self.m)
            if self.R < spec.eps:
                raise ConfigError(f"R={self.R} is finer than the grid resolution {spec.eps}")
            if not self.gamma > 0:
                raise ConfigError("fixed mode needs gamma > 0 for its learning-rate floor")
            if not self.project:
                raise ConfigError("fixed mode requires projection to keep coefficients in range")
        if self.mode == "adaptive":
            if not self.min_m <= self.max_m <= 62:
                raise ConfigError(f"max_m={self.max_m} must lie in [{self.min_m}, 62]")

    @property
    def rounds(self) -> bool:
        """Whether coefficients are randomly rounded."""
        return self.mode == "fixed" or (self.mode == "adaptive" and self.gamma > 0)

    @property
    def min_m(self) -> int:
        """Coarsest fraction-bit count allowed; keeps +/-R on every grid."""
        return max(0, -int(round(math.log2(self.R))))

    @property
    def grid(self) -> GridSpec | None:
        return GridSpec(self.n, self.m) if self.mode == "fixed" else None

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def project(beta: float, R: float) -> float:
    return max(-R, min(beta, R))


def learning_rate(count: float, alpha: float, counter: str = "exact") -> float:
    """Step size from a (possibly approximate) count.

    Exact and global counts use ``alpha/sqrt(n)`` and are only queried after
    the count was incremented; approximate counts use ``alpha/sqrt(count+1)``.
    """
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count!r}")
    if counter == "morris":
        return alpha / math.sqrt(count + 1.0)
    return alpha / math.sqrt(count)


def precision_schedule(eta: float, config: TrainConfig) -> tuple[float, float, int | None]:
    """Return ``(eta, eps, m)`` after applying the grid rule for ``config``.

    ``eps`` is 0 when no rounding happens. Whenever the grid cannot be as fine
    as ``gamma * eta`` the learning rate is floored at ``eps / gamma`` so that
    ``eps <= gamma * eta`` always holds.
    """
    if not config.rounds:
        return eta, 0.0, None
    gamma = config.gamma
    if config.mode == "fixed":
        m = config.m
        eps = grid_resolution(m)
    else:
        _, e = floor_pow2(gamma * eta)
        m = min(max(-e, config.min_m), config.max_m)
        eps = grid_resolution(m)
    if eps > gamma * eta:
        eta = eps / gamma
    return eta, eps, m


def step_1d(weight: float, g: float, eta: float, eps: float, R: float,
            rng: np.random.Generator | None = None, u: float | None = None,
            do_project: bool = True) -> float:
    """One projected gradient step followed by randomized rounding to ``eps``.

    ``eps == 0`` skips the rounding. Pass either ``rng`` or a uniform ``u``.
    """
    beta = weight - eta * g
    if do_project:
        beta = project(beta, R)
    if eps == 0.0:
        return beta
    if u is None:
        u = rng.random()
    return round_with_uniform(beta, eps, u)


class _Uniforms:
    """Blocks of uniforms drawn from one generator, handed out one at a time."""

    __slots__ = ("rng", "buf", "pos")

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.buf: list[float] = []
        self.pos = 0

    def __call__(self) -> float:
        if self.pos >= len(self.buf):
            self.buf = self.rng.random(_UNIFORM_BLOCK).tolist()
            self.pos = 0
        u = self.buf[self.pos]
        self.pos += 1
        return u


class OneDimOGD:
    """Single-coordinate OGD with per-round count, rate and grid schedules.

    Zero gradients are skipped entirely, matching the per-coordinate use in
    the full trainer.
    """

    def __init__(self, config: TrainConfig, rng: np.random.Generator | None = None):
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self._u = _Uniforms(self.rng)
        self.weight = 0.0
        self.count = 0
        self.level = prob_count.MIN_LEVEL
        self.eta_sum = 0.0
        self.eta_last = math.inf
        self.clipped = 0

    def effective_count(self) -> float:
        if self.config.counter == "morris":
            return prob_count.estimate(self.level, self.config.base)
        return float(self.count)

    def update(self, g: float) -> float:
        cfg = self.config
        if g == 0:
            return self.weight
        if abs(g) > cfg.G:
            self.clipped += 1
            g = math.copysign(cfg.G, g)
        if cfg.counter == "morris":
            self.level = prob_count.increment_level(self.level, cfg.base, self._u())
            eta = learning_rate(prob_count.estimate(self.level, cfg.base), cfg.alpha, "morris")
        else:
            self.count += 1
            eta = learning_rate(self.count, cfg.alpha)
        eta, eps, _ = precision_schedule(eta, cfg)
        u = self._u() if eps else None
        self.weight = step_1d(self.weight, g, eta, eps, cfg.R, u=u, do_project=cfg.project)
        self.eta_sum += eta
        self.eta_last = eta
        return self.weight


@dataclass
class TrainStats:
    examples: int = 0
    updates: int = 0
    gradient_clips: int = 0
    saturation_events: int = 0
    extra: dict = field(default_factory=dict)


def _fixed_typecode(K: int) -> str:
    if K <= 8:
        return "b"
    if K <= 16:
        return "h"
    if K <= 32:
        return "i"
    return "q"


class OGDTrainer:
    """Per-coordinate randomized-rounding OGD for sparse logistic regression.

    Coordinates that never received a non-zero gradient are absent from the
    table and behave as weight 0 with a zero count.
    """

    def __init__(self, config: TrainConfig, rng: np.random.Generator | None = None):
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self._u = _Uniforms(self.rng)
        self.stats = TrainStats()
        columns: dict[str, tuple[str, float]] = {}
        if config.mode == "control":
            columns["w"] = ("f", 0.0)
        elif config.mode == "fixed":
            columns["w"] = (_fixed_typecode(config.grid.K), 0)
        else:
            columns["w"] = ("d", 0.0)
            if config.rounds:
                columns["m"] = ("B", config.min_m)
        if config.counter == "exact":
            columns["n"] = ("I", 0)
        elif config.counter == "morris":
            columns["c"] = ("B", prob_count.MIN_LEVEL)
        self.table = CoordinateTable(columns)
        self._scale = config.grid.eps if config.mode == "fixed" else 1.0
        self._warned_clip = False

    def __len__(self):
        return len(self.table)

    def weight(self, index: int) -> float:
        slot = self.table.find(index)
        if slot < 0:
            return 0.0
        return self.table.cols["w"][slot] * self._scale

    def weights(self) -> dict[int, float]:
        w = self.table.cols["w"]
        return {k: w[s] * self._scale for k, s in self.table.items()}

    def margin(self, indices, values=None) -> float:
        table = self.table
        w = table.cols["w"]
        z = 0.0
        if values is None:
            for i in indices:
                s = table.find(i)
                if s >= 0:
                    z += w[s]
        else:
            for i, v in zip(indices, values):
                s = table.find(i)
                if s >= 0:
                    z += w[s] * v
        return z * self._scale

    def predict(self, indices, values=None) -> float:
        return sigmoid(self.margin(indices, values))

    def train_step(self, example) -> float:
        """Predict on ``example`` with the current model, then update on it.

        Returns the pre-update prediction.
        """
        cfg = self.config
        indices = example.indices
        values = example.values
        p = self.predict(indices, values)
        self.stats.examples += 1
        resid = p - example.label
        if resid == 0.0 or not indices:
            return p
        table = self.table
        mode = cfg.mode
        counter = cfg.counter
        alpha = cfg.alpha
        G = cfg.G
        R = cfg.R
        u = self._u
        if counter == "global":
            eta_global = alpha / math.sqrt(self.stats.examples)
        if values is None:
            values = (1.0,) * len(indices)
        for i, x in zip(indices, values):
            g = resid * x
            if g == 0.0:
                continue
            if g > G or g < -G:
                g = self._clip(g)
            slot = table.insert(i)
            cols = table.cols
            if counter == "global":
                eta = eta_global
            elif counter == "exact":
                n = cols["n"][slot] + 1
                cols["n"][slot] = n
                eta = alpha / math.sqrt(n)
            else:
                level = cols["c"][slot]
                if level >= prob_count.MAX_LEVEL:
                    self.stats.saturation_events += 1
                else:
                    level = prob_count.increment_level(level, cfg.base, u())
                    cols["c"][slot] = level
                eta = alpha / math.sqrt(prob_count.estimate(level, cfg.base) + 1.0)
            eta, eps, m = precision_schedule(eta, cfg)
            w = cols["w"]
            if mode == "fixed":
                beta = w[slot] * eps - eta * g
                if beta > R:
                    beta = R
                elif beta < -R:
                    beta = -R
                w[slot] = random_round_raw(beta, eps, u())
            elif eps:
                beta = w[slot] - eta * g
                if beta > R:
                    beta = R
                elif beta < -R:
                    beta = -R
                mcol = cols["m"]
                if m < mcol[slot]:
                    m = mcol[slot]
                    eps = grid_resolution(m)
                mcol[slot] = m
                w[slot] = round_with_uniform(beta, eps, u())
            else:
                beta = w[slot] - eta * g
                if cfg.project:
                    if beta > R:
                        beta = R
                    elif beta < -R:
                        beta = -R
                w[slot] = beta
            self.stats.updates += 1
        return p

    def _clip(self, g: float) -> float:
        self.stats.gradient_clips += 1
        if not self._warned_clip:
            log.warning("gradient %.4g exceeds G=%.4g; clipping (further clips counted silently)",
                        g, self.config.G)
            self._warned_clip = True
        return math.copysign(self.config.G, g)

    def fit(self, examples) -> list[float]:
        return [self.train_step(ex) for ex in examples]

    def to_packed(self, metadata: dict | None = None):
        from .model_store import PackedModel

        return PackedModel.from_trainer(self, metadata)

    def memory_report(self):
        from .model_store import memory_report

        return memory_report(self.to_packed())
