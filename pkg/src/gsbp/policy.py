"""Grid-sampled feedback policy with nearest-neighbor lookup.

The trained control head is evaluated densely on a (t, x) grid once; queries
then return the stored control at the nearest grid point, found with a k-d
tree (leaf size 2) built on coordinates normalized to [0, 1] per axis so the
time axis (possibly hundreds of seconds) and state axes (order one) weigh
equally in the metric. Closed-loop rollouts integrate the dynamics under the
queried policy and summarize the endpoint ensemble.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .sde import euler_maruyama
from .sinkhorn import DiscreteMeasure, sinkhorn_loss

__all__ = [
    "GridSpec",
    "PolicyError",
    "PolicyTable",
    "build_table",
    "closed_loop",
    "linear_scan_query",
    "query",
    "query_batch",
    "write_rollout_csv",
    "write_endpoint_stats_json",
]

log = logging.getLogger(__name__)


class PolicyError(RuntimeError):
    pass


@dataclass
class GridSpec:
    T: float
    box: np.ndarray  # (n, 2) state bounds
    shape: tuple  # (nt, nx1, ..., nxn)

    def __post_init__(self):
        self.box = np.asarray(self.box, dtype=float).reshape(-1, 2)
        self.shape = tuple(int(s) for s in self.shape)
        if len(self.shape) != 1 + self.box.shape[0]:
            raise PolicyError("shape must have one entry per (t, x...) axis")
        if any(s < 2 for s in self.shape):
            raise PolicyError("grid resolution must be >= 2 per axis")
        if self.T <= 0:
            raise PolicyError("T must be positive")


class PolicyTable:
    """Immutable after build; concurrent queries are safe."""

    def __init__(self, points, controls, spec, metadata=None):
        self.points = np.asarray(points, dtype=float)  # (P, 1+n) raw (t, x)
        self.controls = np.asarray(controls, dtype=float)  # (P, m)
        self.spec = spec
        self.metadata = dict(metadata or {})
        if not np.all(np.isfinite(self.controls)):
            raise PolicyError("stored controls must be finite")
        self._lo = np.concatenate([[0.0], spec.box[:, 0]])
        self._span = np.concatenate([[spec.T], spec.box[:, 1] - spec.box[:, 0]])
        self._tree = cKDTree(self._normalize(self.points), leafsize=2)

    def _normalize(self, pts):
        return (np.atleast_2d(pts) - self._lo) / self._span

    def __len__(self):
        return self.points.shape[0]


def build_table(net, grid_spec, metadata=None):
    """Evaluate the control head on the dense grid and index it."""
    axes = [np.linspace(0.0, grid_spec.T, grid_spec.shape[0])]
    for d in range(grid_spec.box.shape[0]):
        lo, hi = grid_spec.box[d]
        axes.append(np.linspace(lo, hi, grid_spec.shape[1 + d]))
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    t0 = time.time()
    TS = points[:, :1]
    XS = points[:, 1:]
    _, _, u = net.heads(TS, XS)
    controls = np.asarray(ad.value_of(u))
    meta = {"grid_shape": list(grid_spec.shape)}
    meta.update(metadata or {})
    table = PolicyTable(points, controls, grid_spec, meta)
    log.info("policy table: %d points built in %.3f s", len(table), time.time() - t0)
    return table


def _nearest_indices(table, Qn):
    """k-d tree lookup with exact lowest-index tie break: when the two nearest
    are within roundoff of each other, enumerate the tied ball and take the
    smallest point index (np.argmin semantics of the linear-scan oracle)."""
    d, i = table._tree.query(Qn, k=2)
    idx = i[:, 0].astype(int)
    tied = np.nonzero(d[:, 1] - d[:, 0] <= 1e-12 * (1.0 + d[:, 0]))[0]
    for r in tied:
        ball = table._tree.query_ball_point(Qn[r], d[r, 0] * (1.0 + 1e-9) + 1e-300)
        idx[r] = min(ball)
    return idx


def query(table, t, x):
    """Control at the nearest grid point in the normalized metric."""
    q = np.concatenate([[float(t)], np.asarray(x, dtype=float).ravel()])
    idx = _nearest_indices(table, table._normalize(q))
    return table.controls[int(idx[0])]


def query_batch(table, ts, xs):
    q = np.column_stack([np.asarray(ts, dtype=float), np.asarray(xs, dtype=float)])
    idx = _nearest_indices(table, table._normalize(q))
    return table.controls[idx]


def linear_scan_query(table, t, x):
    """Brute-force nearest neighbor (oracle; O(P) per query)."""
    q = table._normalize(np.concatenate([[float(t)], np.asarray(x, dtype=float).ravel()]))
    d2 = np.sum((table._normalize(table.points) - q) ** 2, axis=1)
    return table.controls[int(np.argmin(d2))]


def closed_loop(table, dyn, x0_sampler, n_paths, T, steps, seed,
                target_batch=None, eps=0.1, iters=500):
    """Roll out `n_paths` trajectories under the table policy; returns
    (Trajectory with batched states, stats dict). Stats carry the endpoint
    empirical mean/covariance and, when a target batch is given, the debiased
    transport divergence between endpoint cloud and target."""
    rng = np.random.default_rng([seed, 17])
    x0 = np.stack([x0_sampler(rng) for _ in range(n_paths)])
    policy = lambda t, x: query_batch(table, np.full(x.shape[0], t), x)
    tr = euler_maruyama(dyn, x0, policy, T, steps, seed=[seed, 31])
    xT = tr.states[-1]
    stats = {
        "endpoint_mean": xT.mean(axis=0).tolist(),
        "endpoint_cov": np.cov(xT.T).tolist(),
        "n_paths": int(n_paths),
        "steps": int(steps),
    }
    if target_batch is not None:
        target_batch = np.asarray(target_batch, dtype=float)
        stats["sinkhorn_w2eps"] = float(
            sinkhorn_loss(
                DiscreteMeasure.uniform(xT),
                DiscreteMeasure.uniform(target_batch),
                eps,
                max_iter=iters,
            )
        )
        stats["sinkhorn_divergence"] = _cloud_divergence(xT, target_batch, eps, iters)
    return tr, stats


def _cloud_divergence(a, b, eps, iters):
    def loss(u, v):
        mu = DiscreteMeasure.uniform(u)
        nu = DiscreteMeasure.uniform(v)
        return sinkhorn_loss(mu, nu, eps, max_iter=iters)

    return float(loss(a, b) - 0.5 * loss(a, a) - 0.5 * loss(b, b))


def write_rollout_csv(path, tr):
    """Batched trajectory -> rows path_id,t,x1,...,u1,..."""
    states = tr.states  # (steps+1, B, n)
    inputs = tr.inputs
    if states.ndim != 3:
        raise PolicyError("write_rollout_csv expects a batched trajectory")
    K, B, n = states.shape
    m = inputs.shape[-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["path_id", "t"]
            + [f"x{d + 1}" for d in range(n)]
            + [f"u{j + 1}" for j in range(m)]
        )
        for b in range(B):
            for k in range(K):
                w.writerow(
                    [b, repr(float(tr.times[k]))]
                    + [repr(float(v)) for v in states[k, b]]
                    + [repr(float(v)) for v in inputs[k, b]]
                )


def write_endpoint_stats_json(path, stats):
    with open(path, "w") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
