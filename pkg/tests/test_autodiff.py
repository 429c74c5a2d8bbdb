"""Backward-pass contracts, Adam recurrence, and the learning-rate schedule."""

import math

import numpy as np
import pytest

from en2mri.autodiff import (AdamState, Node, adam_step, add, backward,
                             dot_real, l1_modulus_mean, l2_modulus_mean,
                             lr_schedule, no_grad, param, scale, sum_all)
from en2mri.errors import ContractViolation, NumericError

from conftest import crandn, fd_gradcheck


def test_backward_of_sum_is_ones():
    p = param(np.array([[1 + 2j, 3 - 1j], [0.5j, -2 + 0j]]).reshape(1, 2, 2))
    backward(sum_all(p))
    assert np.array_equal(p.grad.real, np.ones((1, 2, 2)))
    assert np.array_equal(p.grad.imag, np.zeros((1, 2, 2)))


def test_backward_of_squared_modulus():
    values = np.array([3.0 + 0j, 4j, 1 - 2j, -0.5 + 0.25j]).reshape(1, 2, 2)
    p = param(values.copy())
    zero = np.zeros_like(values)
    backward(l2_modulus_mean(p, zero))
    # mean -> gradient 2*z / N
    expected = 2.0 * values / values.size
    assert np.allclose(p.grad, expected, atol=1e-15)


def test_backward_requires_scalar_loss():
    p = param(crandn(np.random.default_rng(0), (1, 3, 3)))
    with pytest.raises(ContractViolation):
        backward(add(p, p))


def test_backward_nan_names_rule_tag():
    p = param(np.full((1, 2, 2), np.nan + 0j))
    loss = l2_modulus_mean(p, np.zeros((1, 2, 2), dtype=complex))
    with pytest.raises(NumericError, match="l2_modulus_mean"):
        backward(loss)


def test_backward_linearity(rng):
    p = param(crandn(rng, (1, 4, 4)))
    t1 = crandn(rng, (1, 4, 4))
    t2 = crandn(rng, (1, 4, 4))

    def grad_of(make):
        p.grad = None
        backward(make())
        return p.grad.copy()

    ga = grad_of(lambda: l2_modulus_mean(p, t1))
    gb = grad_of(lambda: l1_modulus_mean(p, t2))
    combined = grad_of(lambda: add(scale(l2_modulus_mean(p, t1), 0.7),
                                   scale(l1_modulus_mean(p, t2), -1.3)))
    assert np.allclose(combined, 0.7 * ga - 1.3 * gb, atol=1e-12)


def test_gradient_accumulates_over_reuse(rng):
    p = param(crandn(rng, (1, 2, 2)))
    loss = add(sum_all(p), sum_all(p))
    backward(loss)
    assert np.allclose(p.grad.real, 2.0)


def test_losses_match_hand_values():
    a = np.array([3 + 4j]).reshape(1, 1, 1)
    b = np.zeros((1, 1, 1), dtype=complex)
    assert l1_modulus_mean(Node(a), Node(b)).item() == pytest.approx(5.0)
    assert l2_modulus_mean(Node(a), Node(b)).item() == pytest.approx(25.0)


def test_l1_subgradient_zero_at_equal_inputs(rng):
    v = crandn(rng, (1, 3, 3))
    p = param(v.copy())
    backward(l1_modulus_mean(p, v.copy()))
    assert np.all(p.grad == 0)


def test_dot_real_gradient_is_weight(rng):
    p = param(crandn(rng, (1, 3, 3)))
    w = crandn(rng, (1, 3, 3))
    backward(dot_real(p, w))
    assert np.allclose(p.grad, w, atol=1e-15)


def test_fd_check_on_composed_ops(rng):
    p = param(crandn(rng, (1, 5, 5)))
    target = crandn(rng, (1, 5, 5))

    def loss():
        return add(scale(l1_modulus_mean(p, target), 0.5), l2_modulus_mean(p, target))

    assert fd_gradcheck(loss, [p], rng) < 1e-4


def test_determinism_bitwise(rng):
    values = crandn(rng, (1, 4, 4))
    target = crandn(rng, (1, 4, 4))

    def run():
        p = param(values.copy())
        backward(l2_modulus_mean(p, target))
        return p.grad.copy()

    g1, g2 = run(), run()
    assert np.array_equal(g1, g2)


def test_no_grad_blocks_recording():
    p = param(np.ones((1, 2, 2), dtype=complex))
    with no_grad():
        loss = sum_all(p)
    assert loss.parents == ()


# ------------------------------------------------------------------- Adam

def test_adam_zero_grads_leave_params():
    p = param(crandn(np.random.default_rng(3), (2, 2, 2)))
    before = p.value.copy()
    state = AdamState([p], learning_rate=0.01)
    adam_step([p], [np.zeros_like(p.value)], state)
    assert np.array_equal(p.value, before)
    assert state.step_count == 1


def test_adam_first_step_hand_value():
    # single real parameter, gradient 1: update = -lr * 1 / (1 + eps)
    p = param(np.zeros((1, 1, 1), dtype=complex))
    state = AdamState([p], learning_rate=0.001)
    adam_step([p], [np.ones((1, 1, 1), dtype=complex) * (1 + 0j)], state)
    expected = -0.001 / (1.0 + 1e-8)
    assert p.value[0, 0, 0].real == pytest.approx(expected, rel=1e-10)
    assert p.value[0, 0, 0].imag == 0.0


def test_adam_identical_params_stay_identical(rng):
    v = crandn(rng, (1, 3, 3))
    g = crandn(rng, (1, 3, 3))
    p1, p2 = param(v.copy()), param(v.copy())
    state = AdamState([p1, p2], learning_rate=0.05)
    for _ in range(5):
        adam_step([p1, p2], [g.copy(), g.copy()], state)
    assert np.array_equal(p1.value, p2.value)


def test_adam_dimension_mismatch():
    p = param(np.zeros((1, 2, 2), dtype=complex))
    state = AdamState([p])
    with pytest.raises(ContractViolation):
        adam_step([p], [np.zeros((1, 3, 3), dtype=complex)], state)


def test_adam_second_moment_nonnegative(rng):
    p = param(crandn(rng, (1, 4, 4)))
    state = AdamState([p])
    for _ in range(10):
        adam_step([p], [crandn(rng, (1, 4, 4))], state)
    assert all(np.all(v >= 0) for v in state.second_moment)


# -------------------------------------------------------------- lr schedule

def test_lr_schedule_endpoints():
    assert lr_schedule(0, 200, 1e-3, 1e-5) == pytest.approx(1e-3)
    assert lr_schedule(199, 200, 1e-3, 1e-5) == pytest.approx(1e-5)


def test_lr_schedule_constant_and_monotone():
    assert lr_schedule(3, 10, 5e-4, 5e-4) == 5e-4
    values = [lr_schedule(e, 50, 1e-3, 1e-5) for e in range(50)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_lr_schedule_rejects_bad_epochs():
    with pytest.raises(ContractViolation):
        lr_schedule(0, 0, 1e-3, 1e-5)
    with pytest.raises(ContractViolation):
        lr_schedule(5, 5, 1e-3, 1e-5)


def test_lr_schedule_single_epoch():
    assert lr_schedule(0, 1, 1e-3, 1e-5) == 1e-3
