"""Entropic optimal transport between discrete measures.

The solver runs matrix-scaling iterations entirely in the log domain, so large
cost/regularization ratios cannot overflow. With kernel K = exp(-C/eps) and
scalings v1, v2, the plan is M = diag(v1) K diag(v2); the regularized cost

    <C + eps*log M, M>

reduces to eps*(r . log v1 + c . log v2) with r, c the plan's marginals, which
is how it is evaluated (no 0*log 0 edge cases). Note this value is negative
for nearby clouds (the entropy term dominates); `sinkhorn_divergence` removes
that bias and is >= 0 with equality iff the measures coincide.

Returned plans are exactly feasible: after the scaling loop the iterate is
rounded onto the transportation polytope (row/column rescale plus a rank-one
fill), which matters at small eps where the alternating updates approach
feasibility only sublinearly.

`sinkhorn_loss_unrolled` repeats a fixed number of scaling updates with tape
ops, so the loss is differentiable w.r.t. the weight vectors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

__all__ = [
    "DiscreteMeasure",
    "SinkhornResult",
    "cost_matrix",
    "read_measure_csv",
    "sinkhorn",
    "sinkhorn_divergence",
    "sinkhorn_loss",
    "sinkhorn_loss_grad",
    "sinkhorn_loss_unrolled",
    "write_measure_csv",
]


@dataclass
class DiscreteMeasure:
    """d weighted atoms in R^n: points (d, n), weights on the simplex (d,)."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.points.ndim != 2 or self.weights.ndim != 1:
            raise ValueError("points must be (d, n), weights (d,)")
        if self.points.shape[0] != self.weights.shape[0]:
            raise ValueError("points/weights atom counts differ")
        if not (np.all(np.isfinite(self.points)) and np.all(np.isfinite(self.weights))):
            raise ValueError("measure has non-finite entries")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-8:
            raise ValueError(f"weights sum to {self.weights.sum():.3e}, not 1")

    @classmethod
    def uniform(cls, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        d = points.shape[0]
        return cls(points, np.full(d, 1.0 / d))


@dataclass
class SinkhornResult:
    plan: np.ndarray
    log_v1: np.ndarray
    log_v2: np.ndarray
    eps: float
    iterations: int
    marginal_err: float


def cost_matrix(xa, xb):
    """Pairwise squared Euclidean distances, shape (da, db)."""
    xa = np.atleast_2d(np.asarray(xa, dtype=float))
    xb = np.atleast_2d(np.asarray(xb, dtype=float))
    aa = np.sum(xa * xa, axis=1)[:, None]
    bb = np.sum(xb * xb, axis=1)[None, :]
    return np.maximum(aa + bb - 2.0 * (xa @ xb.T), 0.0)


def _lse(A, axis):
    m = np.max(A, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(A - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def _check_weights(w, name):
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError(f"{name} must be strictly positive for scaling iterations")
    return w


def _round_to_marginals(M, mu1, mu2):
    """Project a nearly feasible plan onto the transportation polytope: scale
    overfull rows/columns down, then spread the missing mass as a rank-one
    correction. Moves each entry by at most the pre-projection marginal error,
    so the transport cost shifts by O(err * max|C|)."""
    r = M.sum(axis=1)
    M = M * np.minimum(1.0, mu1 / r)[:, None]
    c = M.sum(axis=0)
    M = M * np.minimum(1.0, mu2 / c)[None, :]
    dr = np.maximum(mu1 - M.sum(axis=1), 0.0)
    dc = np.maximum(mu2 - M.sum(axis=0), 0.0)
    s = dr.sum()
    if s > 0.0:
        M = M + np.outer(dr, dc) / s
    return M


def sinkhorn(mu1, mu2, C, eps, tol=1e-9, max_iter=10000):
    """Log-domain scaling iterations until the row marginal of the plan
    matches mu1 to `tol` in max-abs (column marginals hold by construction
    after each second half-update). The returned plan is rounded onto the
    transportation polytope, so both marginals hold to machine precision even
    when small-eps runs stop on the iteration budget.

    When eps is far below the cost scale the cold-started updates crawl, so
    the solve is continued in eps: a geometric schedule from ~max|C| down to
    the target, duals rescaled by the eps ratio between levels (up to 50
    updates each), then the usual loop at the target eps."""
    mu1 = _check_weights(mu1, "mu1")
    mu2 = _check_weights(mu2, "mu2")
    C = np.asarray(C, dtype=float)
    if C.shape != (mu1.size, mu2.size):
        raise ValueError(f"cost shape {C.shape} != ({mu1.size}, {mu2.size})")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix has non-finite entries")
    if eps <= 0:
        raise ValueError("eps must be positive")
    eps = float(eps)
    lmu1, lmu2 = np.log(mu1), np.log(mu2)
    lv1 = np.zeros(mu1.size)
    lv2 = np.zeros(mu2.size)
    cmax = float(np.max(C))
    if eps < cmax / 50.0:
        n_levels = int(np.ceil(np.log(cmax / eps) / np.log(3.0)))
        schedule = [eps * 3.0**k for k in range(n_levels, 0, -1)]
    else:
        schedule = []
    err = np.inf
    total = 0
    prev = schedule[0] if schedule else eps
    for e in schedule + [eps]:
        lv1 *= prev / e
        lv2 *= prev / e
        prev = e
        logK = -C / e
        budget = max_iter if e == eps else min(50, max_iter)
        for _ in range(budget):
            lv1 = lmu1 - _lse(logK + lv2[None, :], axis=1)
            lv2 = lmu2 - _lse(logK + lv1[:, None], axis=0)
            row = np.exp(_lse(logK + lv1[:, None] + lv2[None, :], axis=1))
            err = float(np.max(np.abs(row - mu1)))
            total += 1
            if err <= tol:
                break
    M = _round_to_marginals(np.exp(logK + lv1[:, None] + lv2[None, :]), mu1, mu2)
    err = float(
        max(np.max(np.abs(M.sum(axis=1) - mu1)), np.max(np.abs(M.sum(axis=0) - mu2)))
    )
    return SinkhornResult(M, lv1, lv2, eps, total, err)


def plan_cost(result):
    """<C + eps*log M, M> via the scaling identity."""
    r = result.plan.sum(axis=1)
    c = result.plan.sum(axis=0)
    return float(result.eps * (r @ result.log_v1 + c @ result.log_v2))


def sinkhorn_loss(a, b, eps, tol=1e-9, max_iter=10000):
    """Entropy-regularized transport cost between two measures (can be < 0)."""
    C = cost_matrix(a.points, b.points)
    return plan_cost(sinkhorn(a.weights, b.weights, C, eps, tol, max_iter))


def sinkhorn_divergence(a, b, eps, tol=1e-9, max_iter=10000):
    """Debiased cost: loss(a,b) - (loss(a,a) + loss(b,b))/2; >= 0, and 0 iff
    the measures are equal."""
    lab = sinkhorn_loss(a, b, eps, tol, max_iter)
    laa = sinkhorn_loss(a, a, eps, tol, max_iter)
    lbb = sinkhorn_loss(b, b, eps, tol, max_iter)
    return lab - 0.5 * (laa + lbb)


def sinkhorn_loss_unrolled(wa, wb, C, eps, iters):
    """Transport cost after exactly `iters` scaling updates, built from tape
    ops: wa/wb may be nodes, making the result differentiable in the weights.
    Weights are used as given (no renormalization), so the function extends
    smoothly off the simplex."""
    C = np.asarray(C, dtype=float)
    d1, d2 = C.shape
    logK = -C / float(eps)
    la = ad.log(wa)
    lb = ad.log(wb)
    lv1 = np.zeros(d1)
    lv2 = np.zeros(d2)
    for _ in range(iters):
        lv1 = ad.sub(la, ad.logsumexp(ad.add(logK, lv2), axis=1))
        lv2 = ad.sub(lb, ad.logsumexp(ad.add(logK, ad.reshape(lv1, (d1, 1))), axis=0))
    lM = ad.add(ad.add(logK, ad.reshape(lv1, (d1, 1))), lv2)
    M = ad.exp(lM)
    return ad.mul(
        float(eps), ad.asum(ad.mul(M, ad.add(ad.reshape(lv1, (d1, 1)), lv2)))
    )


def sinkhorn_loss_grad(a, b, eps, iters=200):
    """Gradient of the unrolled transport cost w.r.t. the weights of `a`."""
    C = cost_matrix(a.points, b.points)
    with ad.Tape():
        wa = ad.leaf(a.weights)
        loss = sinkhorn_loss_unrolled(wa, b.weights, C, eps, iters)
        (g,) = ad.backward(loss, [wa])
    return np.asarray(ad.value_of(g), dtype=float)


def write_measure_csv(path, measure):
    n = measure.points.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(n)] + ["weight"])
        for p, wt in zip(measure.points, measure.weights):
            w.writerow([repr(float(v)) for v in p] + [repr(float(wt))])


def read_measure_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-1] != "weight":
        raise ValueError(f"{path}: expected header x1,...,xn,weight")
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return DiscreteMeasure(data[:, :-1], data[:, -1])
