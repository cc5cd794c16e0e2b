import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from insitu_ar.ar_core import (
    ARModel,
    batch_gradient,
    batch_objective,
    forward_many,
    forward_space,
    forward_time,
    holdout_error,
    least_squares,
    predict,
    predict_many,
    train_step,
    train_until,
)
from insitu_ar.errors import DimensionError, DivergenceError, UsageError
from insitu_ar.sampling import Pairs

from conftest import ar_trajectories


def model(coeffs, **kw):
    kw.setdefault("lag", 0)
    return ARModel(order_n=len(coeffs) - 1, coeffs=coeffs, **kw)


# predict

@pytest.mark.parametrize("coeffs, window, expected", [
    ([2.0, 0.0, 0.0], [7.0, 9.0], 2.0),
    ([0.0, 1.0], [5.0], 5.0),
    ([0.1, 0.5, 0.3], [2.0, 1.0], 1.4),
])
def test_predict_examples(coeffs, window, expected):
    assert predict(model(coeffs), window) == pytest.approx(expected)


def test_predict_rejects_wrong_window_length():
    with pytest.raises(DimensionError):
        predict(model([0.0, 1.0, 1.0]), [1.0])


def test_predict_rejects_non_finite_window():
    with pytest.raises(UsageError):
        predict(model([0.0, 1.0]), [math.nan])


@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4),
       st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_predict_is_intercept_plus_dot_product(coeffs, window):
    m = model(coeffs)
    explicit = coeffs[0] + sum(b * w for b, w in zip(coeffs[1:], window))
    assert predict(m, window) == pytest.approx(explicit, abs=1e-9)


def test_predict_many_matches_predict(rng):
    m = model(rng.standard_normal(4))
    X = rng.standard_normal((20, 3))
    np.testing.assert_allclose(predict_many(m, X), [predict(m, x) for x in X], rtol=1e-12)


# train_step

def test_single_sample_step_by_hand():
    # scale = 1 for this batch; grad of 1/2 MSE at zero is [-1, -1]
    m = ARModel(order_n=1, lag=0, learning_rate=0.5)
    m2, loss = train_step(m, [([1.0], 1.0)])
    np.testing.assert_allclose(m2.coeffs, [0.5, 0.5])
    assert loss == pytest.approx(1.0)
    assert m2.steps_trained == 1


def test_zero_learning_rate_leaves_coeffs():
    m = model([0.3, -0.2], learning_rate=0.0)
    m2, loss = train_step(m, [([1.0], 2.0), ([2.0], 1.0)])
    np.testing.assert_array_equal(m2.coeffs, m.coeffs)
    assert loss > 0


def test_converges_to_least_squares_on_ar1_process():
    # V(t) = 0.8 V(t-1) + 0.1, several starting points to excite the intercept
    pairs = []
    for v in np.linspace(-1.0, 1.0, 9):
        for _ in range(5):
            nxt = 0.8 * v + 0.1
            pairs.append(([v], nxt))
            v = nxt
    m, loss = train_until(ARModel(order_n=1, lag=0, learning_rate=0.5), pairs, tol=1e-8)
    assert loss < 1e-8
    oracle = least_squares(pairs, 1)
    np.testing.assert_allclose(oracle, [0.1, 0.8], atol=1e-10)
    np.testing.assert_allclose(m.coeffs, oracle, atol=1e-3)


@pytest.mark.parametrize("coeffs", [[0.2, 0.7], [0.1, 0.5, -0.3], [-0.2, 0.4, 0.3, -0.2]])
def test_gradient_matches_central_differences(coeffs, rng):
    X, y = ar_trajectories(coeffs, n_traj=8, seed=3)
    batch = Pairs(X, y)
    m = model(rng.standard_normal(len(coeffs)) * 0.5, scale=1.7)
    scale = 2.5
    grad = batch_gradient(m, batch, scale)
    h = 1e-6
    for j in range(len(coeffs)):
        # parameter j in scaled space: the intercept is divided by the scale
        step = h * (scale if j == 0 else 1.0)
        up, down = m.coeffs.copy(), m.coeffs.copy()
        up[j] += step
        down[j] -= step
        fd = (batch_objective(model(up), batch, scale)
              - batch_objective(model(down), batch, scale)) / (2 * h)
        assert grad[j] == pytest.approx(fd, rel=1e-6, abs=1e-10)


def test_train_step_is_deterministic(rng):
    X, y = rng.standard_normal((16, 2)), rng.standard_normal(16)
    m = model([0.1, 0.2, 0.3], learning_rate=0.1)
    a, la = train_step(m, Pairs(X, y))
    b, lb = train_step(m, Pairs(X.copy(), y.copy()))
    assert a.coeffs.tobytes() == b.coeffs.tobytes() and la == lb


def test_train_step_does_not_mutate_input_model():
    m = model([0.0, 0.0], learning_rate=0.5)
    train_step(m, [([1.0], 1.0)])
    np.testing.assert_array_equal(m.coeffs, [0.0, 0.0])
    assert m.steps_trained == 0


def test_divergence_raises():
    m = ARModel(order_n=1, lag=0, learning_rate=1e308, normalize=False)
    with pytest.raises(DivergenceError) as info:
        for _ in range(5):
            m, _ = train_step(m, [([1e3], 1e3)])
    assert info.value.learning_rate == 1e308


def test_empty_batch_rejected():
    with pytest.raises(UsageError):
        train_step(ARModel(order_n=1), [])


def test_scaling_keeps_large_magnitudes_stable():
    # values around 1e50 would overflow an unnormalized step
    X, y = ar_trajectories([0.0, 0.9], n_traj=16, seed=1)
    m = ARModel(order_n=1, lag=0, learning_rate=0.5)
    for _ in range(400):
        m, _ = train_step(m, Pairs(X * 1e50, y * 1e50))
    assert m.coeffs[1] == pytest.approx(0.9, abs=1e-3)
    assert abs(m.coeffs[0]) < 1e47


# forwarding

def test_forward_identity_model_is_constant():
    np.testing.assert_array_equal(forward_space(model([0.0, 1.0]), [3.0], 4), [3.0] * 4)
    np.testing.assert_array_equal(forward_time(model([0.0, 1.0, 0.0]), [2.5, 9.0], 3), [2.5] * 3)


def test_forward_geometric_halving():
    np.testing.assert_allclose(forward_space(model([0.0, 0.5]), [8.0], 3), [4.0, 2.0, 1.0])


def test_forward_intercept_only():
    np.testing.assert_array_equal(forward_time(model([1.5, 0.0]), [123.0], 4), [1.5] * 4)


def test_forward_order2_recursion_by_hand():
    # V(k+1) = 1 + 0.5 V(k) - 0.25 V(k-1), seed [V(0), V(-1)] = [2, 4]
    out = forward_space(model([1.0, 0.5, -0.25]), [2.0, 4.0], 3)
    v1 = 1 + 0.5 * 2 - 0.25 * 4
    v2 = 1 + 0.5 * v1 - 0.25 * 2
    v3 = 1 + 0.5 * v2 - 0.25 * v1
    np.testing.assert_allclose(out, [v1, v2, v3])


def test_forward_time_on_fitted_exponential_decay():
    t = np.arange(40)
    v = 5.0 * np.exp(-0.05 * t)
    pairs = [([v[i - 1]], v[i]) for i in range(1, 30)]
    m, _ = train_until(ARModel(order_n=1, lag=0, learning_rate=0.5), pairs, tol=1e-12)
    pred = forward_time(m, [v[29]], 10)
    np.testing.assert_allclose(pred, v[30:40], rtol=0.05)


def test_forward_many_matches_single_forwarding(rng):
    m = model([0.1, 0.6, -0.2])
    seeds = rng.standard_normal((5, 2))
    out = forward_many(m, seeds, 7)
    for row, seed in zip(out, seeds):
        np.testing.assert_allclose(row, forward_space(m, seed, 7), rtol=1e-12)


def test_forward_overflow_raises():
    with pytest.raises(DivergenceError):
        forward_space(model([0.0, 1e200]), [1e200], 3)


# holdout error

def test_holdout_error_examples():
    assert holdout_error(model([0.0, 1.0]), [([10.0], 11.0)]) == pytest.approx(1 / 11)
    X, y = ar_trajectories([0.5, 0.3], n_traj=4)
    assert holdout_error(model([0.5, 0.3]), Pairs(X, y)) == pytest.approx(0.0, abs=1e-15)


def test_holdout_error_floor_guards_zero_targets():
    err = holdout_error(model([0.0, 1.0]), [([1.0], 0.0)], floor=0.5)
    assert err == pytest.approx(2.0)


def test_holdout_error_empty_rejected():
    with pytest.raises(UsageError):
        holdout_error(model([0.0, 1.0]), [])


# model record

def test_checkpoint_round_trip(rng):
    m = ARModel(order_n=3, lag=50, learning_rate=0.01, coeffs=rng.standard_normal(4),
                steps_trained=7, last_batch_loss=0.25, scale=3.5)
    text = m.dumps()
    assert json.loads(text)["schema"] == "insitu-ar/model@1"
    assert ARModel.loads(text) == m


def test_checkpoint_schema_checked():
    record = ARModel(order_n=1).to_dict()
    record["schema"] = "other@9"
    with pytest.raises(UsageError):
        ARModel.from_dict(record)


@pytest.mark.parametrize("kwargs", [dict(order_n=0), dict(lag=-1), dict(learning_rate=-1.0),
                                    dict(order_n=2, coeffs=[1.0, 2.0])])
def test_invalid_models_rejected(kwargs):
    with pytest.raises(UsageError):
        ARModel(**kwargs)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_property_converges_to_least_squares(n, seed):
    rng = np.random.default_rng(seed)
    coeffs = np.concatenate([[rng.uniform(-0.5, 0.5)], rng.uniform(-0.9, 0.9, n) / n])
    X, y = ar_trajectories(coeffs, n_traj=32, seed=seed)
    batch = Pairs(X, y)
    m, loss = train_until(ARModel(order_n=n, lag=0, learning_rate=0.5), batch, tol=1e-8,
                          max_steps=20_000)
    assert loss < 1e-8
    np.testing.assert_allclose(m.coeffs, least_squares(batch, n), atol=1e-3)
