import math

import numpy as np
import pytest

from utils.numerics import (
    ConfigurationError,
    RngStream,
    adagrad_step,
    bce_with_logits,
    frobenius_norm,
    gaussian_fill,
    matvec,
    outer,
    scale_to_norm,
    sigmoid,
)


def test_matvec_hand_cases():
    np.testing.assert_array_equal(matvec(np.eye(3), [1, 2, 3]), [1, 2, 3])
    np.testing.assert_array_equal(matvec([[1, 2], [3, 4]], [1, 1]), [3, 7])


def test_matvec_matches_loop_oracle():
    rng = np.random.default_rng(0)
    m, v = rng.normal(size=(5, 4)), rng.normal(size=4)
    oracle = [sum(m[r, c] * v[c] for c in range(4)) for r in range(5)]
    np.testing.assert_allclose(matvec(m, v), oracle, rtol=1e-12)


def test_matvec_rejects_mismatched_shapes():
    with pytest.raises(ConfigurationError):
        matvec(np.ones((2, 3)), np.ones(2))


def test_outer():
    np.testing.assert_array_equal(outer([1, 0], [0, 1]), [[0, 1], [0, 0]])
    np.testing.assert_array_equal(outer([2], [3]), [[6]])
    rng = np.random.default_rng(1)
    u, v = rng.normal(size=7), rng.normal(size=5)
    oracle = [[u[r] * v[c] for c in range(5)] for r in range(7)]
    np.testing.assert_allclose(outer(u, v), oracle)


def test_frobenius_norm():
    assert frobenius_norm([[3, 4]]) == 5.0
    assert frobenius_norm(np.zeros((3, 2))) == 0.0
    m = np.random.default_rng(2).normal(size=(6, 9))
    assert math.isclose(frobenius_norm(m) ** 2, sum(x * x for x in m.ravel()), rel_tol=1e-12)


def test_scale_to_norm():
    np.testing.assert_allclose(scale_to_norm([[3, 4]], 1), [[0.6, 0.8]])
    np.testing.assert_allclose(scale_to_norm([[3], [4]], 10), [[6], [8]])
    np.testing.assert_array_equal(scale_to_norm(np.zeros((2, 2)), 5), np.zeros((2, 2)))
    with pytest.raises(ConfigurationError):
        scale_to_norm([[1.0]], -1)


def test_bce_with_logits():
    assert math.isclose(float(bce_with_logits(1, 0)), math.log(2), rel_tol=1e-12)
    assert math.isclose(float(bce_with_logits(0, 0)), math.log(2), rel_tol=1e-12)
    far = float(bce_with_logits(1, -50))
    assert math.isfinite(far)
    assert math.isclose(far, 50 + math.log1p(math.exp(-50)), rel_tol=1e-12)
    assert np.all(np.isfinite(bce_with_logits([0, 1], [800.0, -800.0])))


def test_sigmoid_saturates_without_overflow():
    with np.errstate(over="raise"):
        s = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    np.testing.assert_allclose(s, [0.0, 0.5, 1.0])


def test_gaussian_fill():
    np.testing.assert_array_equal(gaussian_fill(3, 4, 0.0, RngStream(1)), np.zeros((3, 4)))
    np.testing.assert_array_equal(gaussian_fill(3, 4, 0.1, RngStream(9)), gaussian_fill(3, 4, 0.1, RngStream(9)))
    draws = gaussian_fill(1000, 1000, 1.0, RngStream(5))
    assert abs(draws.mean()) < 4 / math.sqrt(draws.size)


def test_rng_child_ignores_parent_consumption():
    fresh = RngStream(4)
    used = RngStream(4)
    used.normal(100)
    np.testing.assert_array_equal(fresh.child(3).normal(5), used.child(3).normal(5))
    assert not np.array_equal(fresh.child(3).normal(5), fresh.child(4).normal(5))


def test_adagrad_zero_gradient_is_a_no_op():
    param, acc = np.array([1.0, -2.0]), np.array([0.5, 0.0])
    new_param, new_acc = adagrad_step(param, np.zeros(2), acc, 0.1)
    np.testing.assert_array_equal(new_param, param)
    np.testing.assert_array_equal(new_acc, acc)


def test_adagrad_first_step_moves_by_base_rate():
    grad = np.array([3.0, -0.2, 7.0])
    new_param, _ = adagrad_step(np.zeros(3), grad, np.zeros(3), 0.05, damping=1e-12)
    np.testing.assert_allclose(new_param, -0.05 * np.sign(grad), rtol=1e-9)


def test_adagrad_steps_shrink_under_constant_gradient():
    grad = np.array([0.7])
    p1, acc = adagrad_step(np.zeros(1), grad, np.zeros(1), 0.1)
    p2, _ = adagrad_step(p1, grad, acc, 0.1)
    assert abs(p2[0] - p1[0]) < abs(p1[0])


def test_adagrad_validates_inputs():
    with pytest.raises(ConfigurationError):
        adagrad_step(np.zeros(2), np.zeros(3), np.zeros(2), 0.1)
    with pytest.raises(ConfigurationError):
        adagrad_step(np.zeros(2), np.zeros(2), np.zeros(2), 0.0)
