"""Adam checks: closed-form behaviour on constant gradients, decay schedule,
convergence, and gradient guards."""

import numpy as np
import pytest

from gsbp.optim import Adam, OptimError


def test_first_step_is_signed_lr():
    # with zero state, mhat = g and vhat = g^2, so the step is lr*g/(|g|+eps)
    g = np.array([0.5, -2.0, 1e-3])
    opt = Adam(lr=0.1)
    theta = np.zeros(3)
    out = opt.step(theta, g)
    expect = -0.1 * g / (np.abs(g) + 1e-8)
    assert np.max(np.abs(out - expect)) < 1e-15


def test_constant_gradient_gives_closed_form_trajectory():
    # constant g keeps mhat = g and vhat = g^2 exactly at every step, so
    # theta_K = theta_0 - (sum_t lr*decay^(t-1)) * g/(|g|+eps)
    g = np.array([1.5, -0.25])
    lr, decay, K = 0.05, 0.99, 40
    opt = Adam(lr=lr, decay=decay)
    theta = np.array([1.0, 2.0])
    for _ in range(K):
        theta = opt.step(theta, g)
    ssum = lr * (1 - decay**K) / (1 - decay)
    expect = np.array([1.0, 2.0]) - ssum * g / (np.abs(g) + 1e-8)
    assert np.max(np.abs(theta - expect)) < 1e-12


def test_decay_schedule():
    opt = Adam(lr=1.0, decay=0.999)
    theta = np.zeros(1)
    for _ in range(1000):
        theta = opt.step(theta, np.ones(1))
    assert abs(opt.effective_lr - 0.999**1000) < 1e-15
    assert abs(opt.effective_lr - 0.36769542477096373) < 1e-12


def test_converges_on_quadratic():
    rng = np.random.default_rng(5)
    theta = rng.normal(size=20)
    opt = Adam(lr=0.05)
    for _ in range(2000):
        theta = opt.step(theta, theta)
    assert np.max(np.abs(theta)) < 1e-4


def test_nonfinite_gradient_names_indices():
    opt = Adam()
    g = np.zeros(5)
    g[3] = np.nan
    with pytest.raises(OptimError, match=r"\[3\]"):
        opt.step(np.zeros(5), g)


def test_state_roundtrip_bitwise():
    rng = np.random.default_rng(9)
    opt = Adam(lr=0.02, decay=0.995)
    theta = rng.normal(size=7)
    for _ in range(5):
        theta = opt.step(theta, rng.normal(size=7))
    clone = Adam.from_state_dict(opt.state_dict())
    g = rng.normal(size=7)
    a = opt.step(theta, g)
    b = clone.step(theta, g)
    assert np.array_equal(a, b)
