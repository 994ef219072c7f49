import math
from dataclasses import replace

import numpy as np
import pytest

from lowram.data_io import SparseExample
from lowram.errors import ConfigError
from lowram.fixed_point import round_with_uniform
from lowram.ogd_train import (
    OGDTrainer,
    OneDimOGD,
    TrainConfig,
    alpha_approx_count,
    alpha_exact_count,
    learning_rate,
    precision_schedule,
    project,
    step_1d,
)


@pytest.mark.parametrize("beta, R, out", [(0.3, 1, 0.3), (1.4, 1, 1.0), (-2.5, 1, -1.0)])
def test_project(beta, R, out):
    assert project(beta, R) == out


def test_step_deterministic_cases():
    assert step_1d(0.0, 1.0, 0.5, 0.25, 1.0, u=0.999) == -0.5
    assert step_1d(0.0, 1.0, 0.5, 0.25, 1.0, u=0.0) == -0.5
    assert step_1d(0.9, -1.0, 0.5, 0.25, 1.0, u=0.0) == 1.0
    assert step_1d(0.9, -1.0, 0.5, 0.25, 1.0, u=0.999) == 1.0


def test_step_random_case():
    # intermediate -0.35 -> -0.25 w.p. 0.6, -0.5 w.p. 0.4
    assert step_1d(0.0, 0.7, 0.5, 0.25, 1.0, u=0.59) == -0.25
    assert step_1d(0.0, 0.7, 0.5, 0.25, 1.0, u=0.61) == -0.5
    rng = np.random.default_rng(0)
    draws = [step_1d(0.0, 0.7, 0.5, 0.25, 1.0, rng=rng) for _ in range(20000)]
    assert abs(np.mean(np.array(draws) == -0.25) - 0.6) < 0.015


def test_learning_rates():
    assert learning_rate(1, 0.1) == 0.1
    assert learning_rate(4, 0.1) == 0.05
    assert learning_rate(0.0, 0.1, "morris") == 0.1


def test_precision_schedule():
    ad = TrainConfig(mode="adaptive", gamma=1.0)
    assert precision_schedule(0.3, ad)[:2] == (0.3, 0.25)
    assert precision_schedule(0.25, ad)[:2] == (0.25, 0.25)
    fx = TrainConfig(mode="fixed", gamma=1.0, m=13)
    eta, eps, m = precision_schedule(2**-20, fx)
    assert (eta, eps, m) == (2**-13, 2**-13, 13)
    assert precision_schedule(0.3, TrainConfig(mode="control")) == (0.3, 0.0, None)
    capped = TrainConfig(mode="adaptive", gamma=1.0, max_m=10)
    eta, eps, m = precision_schedule(2**-20, capped)
    assert m == 10 and eps == 2**-10 and eta == 2**-10


def test_alpha_presets():
    assert alpha_exact_count(1, 1, 1) == pytest.approx(1.0)
    assert alpha_approx_count(1, 1, 0) == 1.0


@pytest.mark.parametrize("kwargs", [
    {"mode": "bogus"}, {"counter": "bogus"}, {"R": 3.0}, {"R": 4.0, "n": 2},
    {"mode": "fixed", "gamma": 0.0}, {"mode": "fixed", "project": False}, {"alpha": 0.0},
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_config_digest_stable():
    a, b = TrainConfig(seed=3), TrainConfig(seed=3)
    assert a.digest() == b.digest() != TrainConfig(seed=4).digest()


def test_empty_example_leaves_model_unchanged():
    tr = OGDTrainer(TrainConfig(mode="fixed", counter="morris"))
    assert tr.train_step(SparseExample(1, ())) == 0.5
    assert len(tr) == 0 and tr.stats.examples == 1


def test_first_step_distribution():
    # single feature, y=1: g = -0.5, eta = 0.1, update +0.05 rounded to the gamma*eta grid
    cfg = TrainConfig(mode="adaptive", counter="exact", alpha=0.1, gamma=1.0)
    eps = 2**-4  # largest power of two <= 0.1
    values = []
    for seed in range(4000):
        tr = OGDTrainer(replace(cfg, seed=seed))
        assert tr.train_step(SparseExample(1, (3,))) == 0.5
        values.append(tr.weight(3))
    vals = np.array(values)
    assert set(np.unique(vals)) <= {0.0, eps}
    p_up = 0.05 / eps
    assert abs(np.mean(vals == eps) - p_up) < 4 * math.sqrt(p_up * (1 - p_up) / vals.size)
    assert round_with_uniform(0.05, eps, p_up - 1e-9) == eps


def test_fixed_mode_stays_on_grid_and_in_range():
    cfg = TrainConfig(mode="fixed", counter="exact", alpha=4.0, m=6, R=2.0)
    tr = OGDTrainer(cfg)
    rng = np.random.default_rng(1)
    for _ in range(3000):
        idx = tuple(sorted(set(rng.integers(0, 50, 5).tolist())))
        tr.train_step(SparseExample(int(rng.random() < 0.9), idx))
    for w in tr.weights().values():
        assert abs(w) <= 2.0
        assert w * 64 == math.floor(w * 64)
    assert tr.table.cols["w"].typecode == "h"


def test_adaptive_levels_never_decrease():
    cfg = TrainConfig(mode="adaptive", counter="exact", gamma=1.0, alpha=0.5)
    tr = OGDTrainer(cfg)
    rng = np.random.default_rng(2)
    last = {}
    for _ in range(2000):
        tr.train_step(SparseExample(int(rng.random() < 0.3), (0, 1)))
        for k, s in tr.table.items():
            m = tr.table.cols["m"][s]
            assert m >= last.get(k, 0)
            last[k] = m
            w = tr.table.cols["w"][s]
            assert math.ldexp(w, m) == math.floor(math.ldexp(w, m))


def test_morris_trainer_saturation_counts():
    cfg = TrainConfig(mode="fixed", counter="morris", base=2.0)
    tr = OGDTrainer(cfg)
    slot = tr.table.insert(0)
    tr.table.cols["c"][slot] = 255
    tr.train_step(SparseExample(1, (0,)))
    assert tr.stats.saturation_events == 1
    assert tr.table.cols["c"][slot] == 255


def test_gradient_clipping_counted():
    tr = OGDTrainer(TrainConfig(mode="control", counter="exact", G=0.25))
    tr.train_step(SparseExample(1, (0,)))
    assert tr.stats.gradient_clips == 1
    assert tr.weight(0) == pytest.approx(0.1 * 0.25, rel=1e-6)


def test_raw_values_scale_gradient():
    tr = OGDTrainer(TrainConfig(mode="adaptive", gamma=0.0, counter="exact", alpha=0.1, G=5.0))
    tr.train_step(SparseExample(1, (0, 1), (2.0, 0.5)))
    assert tr.weight(0) == pytest.approx(0.1 * 0.5 * 2.0)
    assert tr.weight(1) == pytest.approx(0.1 * 0.5 * 0.5)


def test_same_seed_same_model():
    rng = np.random.default_rng(0)
    data = [SparseExample(int(rng.random() < 0.5), tuple(sorted(set(rng.integers(0, 30, 4).tolist()))))
            for _ in range(500)]
    cfg = TrainConfig(mode="fixed", counter="morris", seed=9)
    a, b = OGDTrainer(cfg), OGDTrainer(cfg)
    assert a.fit(data) == b.fit(data)
    assert a.weights() == b.weights()


def test_one_dim_morris_runs():
    algo = OneDimOGD(TrainConfig(mode="adaptive", counter="morris", gamma=1.0, R=1.0))
    for _ in range(500):
        algo.update(1.0)
    assert algo.weight == -1.0
    assert algo.level > 1
    assert algo.eta_last <= algo.eta_sum
