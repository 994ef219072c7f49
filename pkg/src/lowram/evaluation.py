"""Progressive validation, ranking metrics, regret measurement and bound calculators."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ComparatorError, ParameterError, UndefinedAUCError
from .logistic import loss_from_margin_array, sigmoid_array
from .ogd_train import OGDTrainer, OneDimOGD, TrainConfig

PROGRESSIVE_HEADER = ("round", "label", "prediction", "logloss", "cum_logloss", "cum_error_rate")
TRADEOFF_HEADER = (
    "sweep", "point", "mode", "counter", "m", "gamma", "seed", "bits_per_coordinate",
    "opt_bits_per_value", "examples", "logloss", "error_rate", "auc", "auc_loss_rel_pct",
    "added_logloss",
)
REGRET_HEADER = ("round", "mean_cum_regret", "stderr")
CSV_SCHEMA_VERSION = 1


def auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AUC needs both positive and negative labels")
    ranks = rankdata(scores, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_loss_relative(candidate_auc: float, control_auc: float) -> float:
    """Percent change of ``1 - AUC`` relative to the control."""
    control_loss = 1.0 - control_auc
    if control_loss <= 0:
        raise ParameterError("control AUC of 1 leaves no AucLoss to compare against")
    return 100.0 * ((1.0 - candidate_auc) - control_loss) / control_loss


def error_rate(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if labels.size == 0:
        return math.nan
    return float(np.mean((predictions >= 0.5).astype(np.int8) != labels))


@dataclass
class ProgressiveResult:
    predictions: np.ndarray
    labels: np.ndarray
    losses: np.ndarray
    summary: dict = field(default_factory=dict)

    @property
    def mean_loss(self) -> float:
        return self.summary["logloss"]


def summarize(predictions, labels, losses, control_auc: float | None = None) -> dict:
    n = len(labels)
    out = {
        "examples": n,
        "logloss": float(np.mean(losses)) if n else math.nan,
        "error_rate": error_rate(predictions, labels),
        "auc": math.nan,
        "auc_loss_rel_pct": math.nan,
    }
    try:
        out["auc"] = auc(predictions, labels)
    except UndefinedAUCError:
        pass
    if control_auc is not None and not math.isnan(out["auc"]):
        out["auc_loss_rel_pct"] = auc_loss_relative(out["auc"], control_auc)
    return out


def progressive_validate(trainer, stream: Iterable, control_auc: float | None = None,
                         on_record: Callable[[int, int, float, float], None] | None = None
                         ) -> ProgressiveResult:
    """Predict each example with the model trained on the previous ones, then train on it.

    ``trainer.train_step`` must return its pre-update prediction.
    ``on_record(round, label, prediction, loss)`` sees every record in order.
    """
    preds: list[float] = []
    labels: list[int] = []
    for t, ex in enumerate(stream, start=1):
        p = trainer.train_step(ex)
        preds.append(p)
        labels.append(ex.label)
        if on_record is not None:
            on_record(t, ex.label, p, _single_loss(p, ex.label))
    P = np.array(preds, dtype=np.float64)
    Y = np.array(labels, dtype=np.int8)
    L = _losses_from_probs(P, Y)
    return ProgressiveResult(P, Y, L, summarize(P, Y, L, control_auc))


def _single_loss(p: float, y: int) -> float:
    q = p if y == 1 else 1.0 - p
    return -math.log(q) if q > 0 else math.inf


def _losses_from_probs(P, Y) -> np.ndarray:
    q = np.where(Y == 1, P, 1.0 - P)
    with np.errstate(divide="ignore"):
        return -np.log(q)


class ProgressiveCSVWriter:
    """Streams progressive-validation records to CSV with running metrics."""

    def __init__(self, fh):
        self.writer = csv.writer(fh, lineterminator="\n")
        self.writer.writerow(PROGRESSIVE_HEADER)
        self.loss_sum = 0.0
        self.errors = 0

    def __call__(self, t: int, y: int, p: float, loss: float) -> None:
        self.loss_sum += loss
        self.errors += int((p >= 0.5) != (y == 1))
        self.writer.writerow((t, y, repr(p), repr(loss), repr(self.loss_sum / t), repr(self.errors / t)))


def evaluate_fixed(model, X, y) -> dict:
    """Metrics of a fixed model on a CSR design matrix (no training)."""
    w = model.dense(X.shape[1]) if hasattr(model, "dense") else np.asarray(model)
    z = X @ w
    P = sigmoid_array(z)
    L = loss_from_margin_array(z, y)
    return summarize(P, y, L)


def regret_bound_theorem1(R: float, G: float, gamma: float, eta_T: float, eta_sum: float,
                          T: int) -> float:
    """``(2R)^2/(2 eta_T) + (G^2 + gamma^2) eta_sum / 2 + gamma R sqrt(T)``."""
    if not eta_T > 0:
        raise ParameterError("final learning rate must be positive")
    if eta_sum < eta_T * (1 - 1e-12):
        raise ParameterError("learning-rate sum must be at least the final rate")
    if gamma < 0:
        raise ParameterError("gamma must be non-negative")
    return (2 * R) ** 2 / (2 * eta_T) + 0.5 * (G * G + gamma * gamma) * eta_sum + gamma * R * math.sqrt(T)


def regret_bound_corollary1(R: float, G: float, gamma: float, counts: Sequence[float]) -> float:
    """Sum over coordinates of ``2R sqrt(2 n (G^2+gamma^2)) + gamma R sqrt(n)``."""
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts < 0):
        raise ParameterError("counts must be non-negative")
    return float(np.sum(2 * R * np.sqrt(2 * counts * (G * G + gamma * gamma))
                        + gamma * R * np.sqrt(counts)))


def counter_constants(T: int, base: float, c: float = 2.5) -> tuple[float, float]:
    """``(k1, k2)`` from the counter's high-probability bounds."""
    k1 = 1.0 / (base * c * math.log(T))
    k2 = math.e * base ** (math.sqrt(2 * c * math.log(T) / math.log(base)) + 2) / (base - 1)
    return k1, k2


def regret_bound_theorem2(alpha: float, R: float, G: float, gamma: float, k1: float, k2: float,
                          T: int) -> float:
    """Non-asymptotic expected-regret bound for one coordinate with approximate counts."""
    return (2 * R * R * math.sqrt(k2 * T + 1) / alpha
            + (G * G + gamma * gamma) * alpha * math.sqrt(T) / math.sqrt(k1)
            + gamma * R * math.sqrt(T)
            + 4 * R * G * math.sqrt(T))


# ---------------------------------------------------------------------------
# regret measurement


@dataclass
class RegretTrace:
    """One run against the post-hoc comparator.

    ``cumulative_regret[t]`` sums ``loss_s(played_s) - loss_s(comparator)`` over
    rounds up to ``t``; its last entry is the regret.
    """

    losses: np.ndarray
    comparator: float
    comparator_point: object
    cumulative_regret: np.ndarray
    eta_last: float = math.nan
    eta_sum: float = math.nan

    @property
    def regret(self) -> float:
        return float(self.cumulative_regret[-1]) if len(self.cumulative_regret) else 0.0


@dataclass
class RegretSummary:
    regrets: np.ndarray
    traces: list

    @property
    def mean(self) -> float:
        return float(np.mean(self.regrets))

    @property
    def stderr(self) -> float:
        if len(self.regrets) < 2:
            return math.nan
        return float(np.std(self.regrets, ddof=1) / math.sqrt(len(self.regrets)))


def adversary_signs(kind: str, rng: np.random.Generator):
    """Gradient oracle ``(t, played_point) -> g`` with ``|g| = 1``.

    ``random``: seeded independent signs. ``adaptive``: pushes against the
    played point (coin flip at zero). ``constant``: always +1.
    """
    if kind == "random":
        return lambda t, b: 1.0 if rng.random() < 0.5 else -1.0
    if kind == "adaptive":
        def g(t, b):
            if b > 0:
                return 1.0
            if b < 0:
                return -1.0
            return 1.0 if rng.random() < 0.5 else -1.0
        return g
    if kind == "constant":
        return lambda t, b: 1.0
    raise ParameterError(f"unknown adversary {kind!r}")


def run_linear_1d(config: TrainConfig, T: int, gradients, rng: np.random.Generator,
                  scale: float = 1.0) -> RegretTrace:
    """Play one-dimensional linear losses ``g_t * beta`` for ``T`` rounds.

    ``gradients`` is a sequence of length ``T`` or a callable oracle. The
    comparator is the better endpoint of ``[-R, R]``.
    """
    algo = OneDimOGD(config, rng)
    losses = np.empty(T)
    grads = np.empty(T)
    oracle = gradients if callable(gradients) else None
    for t in range(T):
        b = algo.weight
        g = scale * (oracle(t, b) if oracle else gradients[t])
        losses[t] = g * b
        grads[t] = g
        algo.update(g)
    gsum = float(grads.sum())
    point = -config.R * math.copysign(1.0, gsum) if gsum else 0.0
    comparator = point * gsum
    cum = np.cumsum(losses - grads * point)
    return RegretTrace(losses, comparator, point, cum, algo.eta_last, algo.eta_sum)


def measure_regret_linear(config: TrainConfig, T: int, seeds: Sequence[int],
                          adversary: str = "random", sequence_seed: int | None = None
                          ) -> RegretSummary:
    """Mean regret over seeds of the one-dimensional algorithm.

    With ``sequence_seed`` the random-sign sequence is shared across seeds and
    only the rounding randomness varies.
    """
    traces = []
    for seed in seeds:
        rng = np.random.default_rng([seed, 1])
        if sequence_seed is not None and adversary == "random":
            srng = np.random.default_rng([sequence_seed, 2])
            grads = np.where(srng.random(T) < 0.5, 1.0, -1.0)
        else:
            grads = adversary_signs(adversary, np.random.default_rng([seed, 2]))
        traces.append(run_linear_1d(replace(config, seed=seed), T, grads, rng))
    return RegretSummary(np.array([tr.regret for tr in traces]), traces)


@dataclass
class ComparatorResult:
    beta: np.ndarray
    objective: float
    residual: float
    iterations: int
    converged: bool


def projected_gradient_norm(beta, grad, R) -> float:
    """Infinity norm of ``beta - P(beta - grad)``: zero exactly at box-constrained optima."""
    step = np.clip(beta - grad, -R, R) - beta
    return float(np.max(np.abs(step))) if step.size else 0.0


def solve_comparator(X, y, R: float, tol: float = 1e-8, max_iter: int = 200_000,
                     raise_on_failure: bool = True) -> ComparatorResult:
    """Minimise the summed logistic loss over ``[-R, R]^d``.

    Spectral projected gradient with a non-monotone Armijo line search. The
    stopping rule is ``||beta - P(beta - grad)||_inf <= tol`` with the gradient
    normalised by the number of examples.
    """
    Xc = X.tocsr()
    XT = Xc.T.tocsr()
    n_rows, d = Xc.shape
    yf = np.asarray(y, dtype=np.float64)
    scale = 1.0 / max(n_rows, 1)

    def fg(beta):
        z = Xc @ beta
        f = float(loss_from_margin_array(z, yf).sum()) * scale
        g = (XT @ (sigmoid_array(z) - yf)) * scale
        return f, g

    beta = np.zeros(d)
    f, g = fg(beta)
    history = [f] * 10
    step = 1.0
    residual = projected_gradient_norm(beta, g, R)
    it = 0
    while residual > tol and it < max_iter:
        it += 1
        direction = np.clip(beta - step * g, -R, R) - beta
        slope = float(g @ direction)
        ref = max(history)
        lam = 1.0
        while True:
            cand = beta + lam * direction
            fc, gc = fg(cand)
            if fc <= ref + 1e-4 * lam * slope or lam < 1e-20:
                break
            lam *= 0.5
        s = cand - beta
        yv = gc - g
        sy = float(s @ yv)
        step = float(s @ s) / sy if sy > 1e-300 else 1e3
        step = min(max(step, 1e-10), 1e10)
        beta, f, g = cand, fc, gc
        history = history[1:] + [f]
        residual = projected_gradient_norm(beta, g, R)
    result = ComparatorResult(beta, f / scale, residual, it, residual <= tol)
    if not result.converged and raise_on_failure:
        raise ComparatorError("comparator solver did not converge", residual)
    return result


def measure_regret_logistic(config: TrainConfig, examples: Sequence, seeds: Sequence[int],
                            comparator: ComparatorResult | None = None, dim: int | None = None
                            ) -> tuple[RegretSummary, ComparatorResult, np.ndarray]:
    """Expected regret of the full trainer on a fixed logistic stream.

    Returns the summary, the comparator and the per-coordinate counts of
    non-zero gradients (identical across seeds for binary features).
    """
    from .data_io import to_csr

    X, y = to_csr(examples, dim)
    if comparator is None:
        comparator = solve_comparator(X, y, config.R)
    comparator_losses = loss_from_margin_array(X @ comparator.beta, y)
    traces = []
    counts = np.zeros(X.shape[1])
    for seed in seeds:
        trainer = OGDTrainer(replace(config, seed=seed))
        losses = np.empty(len(examples))
        for t, ex in enumerate(examples):
            p = trainer.train_step(ex)
            losses[t] = _single_loss(p, ex.label)
        cum_regret = np.cumsum(losses - comparator_losses)
        traces.append(RegretTrace(losses, comparator.objective, comparator.beta, cum_regret))
    for ex in examples:
        counts[list(ex.indices)] += 1
    return RegretSummary(np.array([tr.regret for tr in traces]), traces), comparator, counts


def write_regret_csv(fh, summary: RegretSummary, every: int = 1) -> None:
    """Mean and standard error over runs of cumulative regret against the post-hoc comparator."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(REGRET_HEADER)
    reg = np.stack([tr.cumulative_regret for tr in summary.traces])
    mean = reg.mean(axis=0)
    runs = reg.shape[0]
    se = reg.std(axis=0, ddof=1) / math.sqrt(runs) if runs > 1 else np.full(mean.shape, math.nan)
    for t in range(every - 1, mean.size, every):
        writer.writerow((t + 1, repr(float(mean[t])), repr(float(se[t]))))


def tune_alpha(config: TrainConfig, examples: Sequence, grid: Sequence[float]) -> tuple[float, dict]:
    """Pick the learning-rate scale with the lowest progressive log loss on ``examples``."""
    scores = {}
    for a in grid:
        trainer = OGDTrainer(replace(config, alpha=a))
        scores[a] = progressive_validate(trainer, examples).summary["logloss"]
    best = min(grid, key=lambda a: (scores[a], a))
    return best, scores


def write_tradeoff_csv(fh, rows: Iterable[dict]) -> None:
    writer = csv.DictWriter(fh, fieldnames=TRADEOFF_HEADER, lineterminator="\n", restval="")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
