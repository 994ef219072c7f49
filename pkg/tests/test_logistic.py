import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowram.errors import ParameterError
from lowram.logistic import (
    error_bounds,
    expected_relative_bound,
    logistic_gradient,
    loss,
    loss_from_margin,
    loss_from_margin_array,
    loss_increase,
    margin,
    predict,
    sigmoid,
    sigmoid_array,
    softplus,
)


def test_predict_examples():
    assert predict({}, [1, 2]) == 0.5
    assert predict({0: math.log(3)}, [0]) == pytest.approx(0.75, abs=1e-15)
    assert predict({0: 800.0}, [0]) == 1.0
    assert predict({0: -800.0}, [0]) == 0.0


def test_loss_examples():
    assert loss([3, 4], 1, {}) == pytest.approx(math.log(2))
    assert loss([3, 4], 0, {}) == pytest.approx(math.log(2))
    w = {0: math.log(3)}
    assert loss([0], 1, w) == pytest.approx(-math.log(0.75), rel=1e-14)
    assert loss([0], 0, w) == pytest.approx(-math.log(0.25), rel=1e-14)
    assert loss([0], 1, w) == pytest.approx(0.2877, abs=1e-4)
    assert loss([0], 0, w) == pytest.approx(1.3863, abs=1e-4)
    with pytest.raises(ParameterError):
        loss([0], 2, w)


def test_large_margins_are_stable():
    assert loss_from_margin(1000.0, 1) == 0.0
    assert loss_from_margin(-1000.0, 1) == pytest.approx(1000.0)
    assert softplus(-1000.0) == 0.0
    assert math.isfinite(loss_from_margin(-1e308, 1))


def test_margin_forms_agree():
    w = {1: 0.5, 4: -0.25}
    dense = np.zeros(6)
    dense[1], dense[4] = 0.5, -0.25
    assert margin(w, [1, 4, 5]) == margin(dense, [1, 4, 5]) == 0.25
    assert margin(w, [1, 4], [2.0, 4.0]) == 0.0


@given(st.floats(-50, 50), st.sampled_from([0, 1]))
def test_array_forms_match_scalar(z, y):
    assert float(loss_from_margin_array(z, y)) == pytest.approx(loss_from_margin(z, y), rel=1e-12, abs=1e-300)
    assert float(sigmoid_array(z)) == pytest.approx(sigmoid(z), rel=1e-12, abs=1e-300)


@settings(max_examples=300)
@given(st.floats(-30, 30), st.floats(-30, 30), st.sampled_from([0, 1]))
def test_loss_increase_matches_difference(z, zh, y):
    direct = loss_from_margin(zh, y) - loss_from_margin(z, y)
    assert float(loss_increase(z, zh, y)) == pytest.approx(direct, rel=1e-9, abs=1e-12)


def test_gradient_matches_finite_difference():
    rng = np.random.default_rng(0)
    w = {i: float(v) for i, v in enumerate(rng.normal(size=6))}
    idx = [0, 2, 5]
    for y in (0, 1):
        g = logistic_gradient(idx, y, w)
        for i in idx:
            h = 1e-6
            up, dn = dict(w), dict(w)
            up[i] += h
            dn[i] -= h
            fd = (loss(idx, y, up) - loss(idx, y, dn)) / (2 * h)
            assert g[i] == pytest.approx(fd, abs=1e-8)


def test_error_bounds_identity():
    b = error_bounds({0: 0.3}, {0: 0.3}, [0], 1, 2**-5)
    assert b.delta == 0 and b.additive_bound == 0 and b.relative_bound == 0
    assert b.realized_additive == 0


def test_error_bounds_log2_relative():
    b = error_bounds({0: math.log(2)}, {0: 0.0}, [0], 1, 1.0)
    assert b.relative_bound == pytest.approx(1.0)
    assert b.realized_additive <= b.additive_bound
    assert b.realized_relative <= b.relative_bound


def test_expected_relative_oracle():
    eps, k = 2**-7, 100
    oracle = 2 * math.sqrt(2 * math.pi * k) * math.exp(eps**2 * k / 2) * eps
    assert expected_relative_bound(eps, k) == pytest.approx(oracle, rel=1e-14)
    assert expected_relative_bound(eps, k) == pytest.approx(0.3929, abs=1e-4)


def test_error_bounds_zero_loss_reports_none():
    b = error_bounds({0: 1000.0}, {0: 999.0}, [0], 1, 1.0)
    assert b.relative_bound is None and b.realized_relative is None


def test_error_bounds_rejects_real_features():
    with pytest.raises(ParameterError):
        error_bounds({0: 1.0}, {0: 1.0}, [0], 1, 1.0, values=[0.5])
    b = error_bounds({0: 1.0, 1: 2.0}, {0: 1.0, 1: 0.0}, [0, 1], 1, 1.0, values=[1, 0])
    assert b.delta == 0 and b.apriori_additive == 1.0


@settings(max_examples=200)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=20), st.integers(0, 8),
       st.sampled_from([0, 1]), st.integers(0, 2**32 - 1))
def test_rounding_error_bounds_hold(beta, m, y, seed):
    from lowram.fixed_point import random_round_array

    eps = 2.0**-m
    rng = np.random.default_rng(seed)
    bhat = random_round_array(beta, eps, rng) * eps
    idx = list(range(len(beta)))
    b = error_bounds(np.array(beta), bhat, idx, y, eps)
    tol = 1e-12 * max(1.0, b.delta)
    assert b.realized_additive <= b.additive_bound + tol
    assert b.additive_bound <= b.apriori_additive + tol
    if b.relative_bound is not None:
        assert b.realized_relative <= b.relative_bound + tol
