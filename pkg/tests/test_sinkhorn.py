"""Transport solver checks: closed forms, limiting regimes, the assignment
limit against exhaustive enumeration, loss identity, debiased divergence
properties, and unrolled-gradient agreement with finite differences."""

import itertools

import numpy as np
import pytest

from gsbp import autodiff as ad
from gsbp.sinkhorn import (
    DiscreteMeasure,
    cost_matrix,
    plan_cost,
    read_measure_csv,
    sinkhorn,
    sinkhorn_divergence,
    sinkhorn_loss,
    sinkhorn_loss_grad,
    sinkhorn_loss_unrolled,
    write_measure_csv,
)


def random_measure(rng, d, n):
    w = rng.uniform(0.2, 1.0, size=d)
    return DiscreteMeasure(rng.normal(size=(d, n)), w / w.sum())


def test_cost_matrix_brute_force():
    rng = np.random.default_rng(2)
    xa = rng.normal(size=(5, 3))
    xb = rng.normal(size=(4, 3))
    C = cost_matrix(xa, xb)
    for i in range(5):
        for j in range(4):
            assert abs(C[i, j] - np.sum((xa[i] - xb[j]) ** 2)) < 1e-12


def test_marginals_match_at_convergence():
    rng = np.random.default_rng(3)
    for _ in range(5):
        a = random_measure(rng, 6, 2)
        b = random_measure(rng, 9, 2)
        res = sinkhorn(a.weights, b.weights, cost_matrix(a.points, b.points), eps=0.3)
        assert res.marginal_err <= 1e-9
        assert np.max(np.abs(res.plan.sum(axis=1) - a.weights)) <= 1e-9
        assert np.max(np.abs(res.plan.sum(axis=0) - b.weights)) <= 1e-12


def test_single_atom_loss_is_squared_distance():
    a = DiscreteMeasure([[0.3, 0.4]], [1.0])
    b = DiscreteMeasure([[1.3, -0.6]], [1.0])
    assert abs(sinkhorn_loss(a, b, eps=0.7) - 2.0) < 1e-9


def test_two_atom_symmetric_closed_form():
    # C = [[0,1],[1,0]], uniform marginals: diagonal mass p solves
    # log(p/(1/2-p)) = c/eps  =>  p = exp(c/eps) / (2*(1+exp(c/eps)))
    pts = [[0.0], [1.0]]
    a = DiscreteMeasure(pts, [0.5, 0.5])
    c, eps = 1.0, 0.5
    res = sinkhorn(a.weights, a.weights, cost_matrix(pts, pts), eps=eps)
    p = np.exp(c / eps) / (2.0 * (1.0 + np.exp(c / eps)))
    assert abs(res.plan[0, 0] - p) < 1e-8
    assert abs(res.plan[1, 1] - p) < 1e-8
    q = 0.5 - p
    expect = 2 * c * q + eps * 2 * (p * np.log(p) + q * np.log(q))
    assert abs(plan_cost(res) - expect) < 1e-8


def test_large_eps_plan_is_product_measure():
    rng = np.random.default_rng(5)
    a = random_measure(rng, 4, 2)
    b = random_measure(rng, 5, 2)
    C = cost_matrix(a.points, b.points)
    res = sinkhorn(a.weights, b.weights, C, eps=50.0 * C.max())
    assert np.max(np.abs(res.plan - np.outer(a.weights, b.weights))) < 1e-3


def test_small_eps_recovers_best_assignment():
    rng = np.random.default_rng(8)
    pts_a = rng.uniform(0, 4, size=(4, 2))
    pts_b = rng.uniform(0, 4, size=(4, 2))
    C = cost_matrix(pts_a, pts_b)
    best = min(
        itertools.permutations(range(4)), key=lambda p: sum(C[i, p[i]] for i in range(4))
    )
    w = np.full(4, 0.25)
    res = sinkhorn(w, w, C, eps=0.02 * float(np.mean(C)), tol=1e-10, max_iter=50000)
    on_best = sum(res.plan[i, best[i]] for i in range(4))
    assert on_best > 0.9


def test_loss_identity_matches_direct_sum():
    # the identity is exact for the raw scaling iterate; the returned plan is
    # projected to exact marginals, which perturbs the direct sum at the level
    # of the pre-projection feasibility error, so converge well below the gate
    rng = np.random.default_rng(9)
    a = random_measure(rng, 5, 3)
    b = random_measure(rng, 7, 3)
    C = cost_matrix(a.points, b.points)
    res = sinkhorn(a.weights, b.weights, C, eps=0.4, tol=1e-13)
    direct = float(np.sum(res.plan * (C + res.eps * np.log(res.plan))))
    assert abs(plan_cost(res) - direct) < 1e-10 * (1 + abs(direct))


def test_loss_is_symmetric():
    rng = np.random.default_rng(10)
    a = random_measure(rng, 4, 2)
    b = random_measure(rng, 6, 2)
    assert abs(sinkhorn_loss(a, b, 0.25) - sinkhorn_loss(b, a, 0.25)) < 1e-9


def test_matched_clouds_raw_loss_is_negative_entropy_scale():
    # identical uniform clouds: transport is near-diagonal but the entropy term
    # makes the raw value negative, bounded below by -eps*log(d)
    # coupling entropy for uniform marginals lies in [log d, 2 log d], so the
    # self-loss sits in [-2 eps log d, -eps log d]
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    a = DiscreteMeasure.uniform(pts)
    vals = []
    for eps in (0.5, 0.1, 0.02):
        v = sinkhorn_loss(a, a, eps)
        assert v <= -eps * np.log(4.0) + 1e-9
        assert v >= -2.0 * eps * np.log(4.0) - 1e-9
        vals.append(abs(v))
    assert vals[0] > vals[1] > vals[2]  # bias shrinks with eps


def test_divergence_zero_iff_equal_and_nonnegative():
    rng = np.random.default_rng(11)
    a = random_measure(rng, 6, 2)
    assert abs(sinkhorn_divergence(a, a, 0.2)) < 1e-9
    for _ in range(5):
        b = random_measure(rng, 8, 2)
        assert sinkhorn_divergence(a, b, 0.2) > -1e-8
    far = DiscreteMeasure(a.points + 3.0, a.weights)
    assert sinkhorn_divergence(a, far, 0.2) > 1.0


def test_divergence_decreases_as_clouds_merge():
    rng = np.random.default_rng(12)
    base = rng.normal(size=(10, 2))
    a = DiscreteMeasure.uniform(base)
    prev = np.inf
    for shift in (2.0, 1.0, 0.25, 0.0):
        b = DiscreteMeasure.uniform(base + shift)
        d = sinkhorn_divergence(a, b, 0.3)
        assert d < prev + 1e-12
        prev = d
    assert prev < 1e-8


def test_unrolled_loss_converges_to_solver_loss():
    rng = np.random.default_rng(13)
    a = random_measure(rng, 5, 2)
    b = random_measure(rng, 6, 2)
    C = cost_matrix(a.points, b.points)
    target = sinkhorn_loss(a, b, 0.3, tol=1e-12, max_iter=100000)
    got = float(ad.value_of(sinkhorn_loss_unrolled(a.weights, b.weights, C, 0.3, 400)))
    assert abs(got - target) < 1e-8 * (1 + abs(target))


def test_unrolled_gradient_matches_fd():
    rng = np.random.default_rng(14)
    a = random_measure(rng, 4, 2)
    b = random_measure(rng, 5, 2)
    C = cost_matrix(a.points, b.points)
    K = 80
    g = sinkhorn_loss_grad(a, b, eps=0.5, iters=K)

    def value(w):
        return float(ad.value_of(sinkhorn_loss_unrolled(w, b.weights, C, 0.5, K)))

    h = 1e-6
    for i in range(4):
        wp, wm = a.weights.copy(), a.weights.copy()
        wp[i] += h
        wm[i] -= h
        fd = (value(wp) - value(wm)) / (2 * h)
        assert abs(g[i] - fd) < 1e-5 * (1 + abs(fd))


def test_validation_rejects_bad_inputs():
    with pytest.raises(ValueError, match="sum"):
        DiscreteMeasure([[0.0], [1.0]], [0.7, 0.7])
    with pytest.raises(ValueError, match="nonneg"):
        DiscreteMeasure([[0.0], [1.0]], [-0.5, 1.5])
    a = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
    with pytest.raises(ValueError, match="positive"):
        sinkhorn(np.array([1.0, 0.0]), a.weights, np.zeros((2, 2)), 0.1)
    with pytest.raises(ValueError, match="eps"):
        sinkhorn(a.weights, a.weights, np.zeros((2, 2)), 0.0)


def test_measure_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(15)
    m = random_measure(rng, 6, 3)
    path = tmp_path / "m.csv"
    write_measure_csv(path, m)
    back = read_measure_csv(path)
    assert np.array_equal(back.points, m.points)
    assert np.array_equal(back.weights, m.weights)
