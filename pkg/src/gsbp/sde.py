"""Controlled SDE representation, Euler-Maruyama integration, and synthetic
trajectory data generation.

The model is dx = f(t,x,u) dt + sqrt(2) g(t,x,u) dw with diffusion tensor
G = g g^T. The integrator is the explicit scheme

    x_{k+1} = x_k + f dt + sqrt(2) g dW_k,   dW_k ~ Normal(0, dt I_p),

reproducible from an integer seed; a standard-normal noise array can be
injected instead to couple paths across resolutions or fix noise in training
windows. States may be batched: x0 of shape (B, n) advances B paths in
lockstep through vectorized drift/diffusion maps.

`synthetic_truth` is a documented 2-state, 2-input ground truth used in place
of an expensive particle simulation: each state sits in a double well whose
depth is modulated smoothly and non-affinely by the inputs, plus a weak
linear coupling and a slow explicit time dependence; the diffusion magnitude
of channel 1 decreases with input 1 and that of channel 2 varies with the
state. Closed forms live here so independent tests can pin them down.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ControlledDynamics",
    "RampInput",
    "SdeError",
    "Trajectory",
    "TrajectoryDataset",
    "euler_maruyama",
    "gaussian_box_sampler",
    "generate_dataset",
    "latin_hypercube",
    "read_trajectories_csv",
    "synthetic_truth",
    "write_trajectories_csv",
]


class SdeError(RuntimeError):
    pass


@dataclass
class ControlledDynamics:
    """Drift f(t,x,u) -> (n,), diffusion g(t,x,u) -> (n,p); both accept
    batched states (B,n) with u (m,) or (B,m) and broadcast accordingly."""

    f: callable
    g: callable
    n: int
    m: int
    p: int
    check_psd: bool = False

    def G(self, t, x, u):
        """Diffusion tensor g g^T, shape (..., n, n)."""
        gv = np.asarray(self.g(t, x, u), dtype=float)
        G = gv @ np.swapaxes(gv, -1, -2)
        if self.check_psd:
            if not np.allclose(G, np.swapaxes(G, -1, -2), atol=1e-12):
                raise SdeError("G not symmetric")
            w = np.linalg.eigvalsh(G)
            if np.min(w) < -1e-10:
                raise SdeError(f"G not PSD (min eigenvalue {np.min(w):.3e})")
        return G


@dataclass
class RampInput:
    """Linear input schedule u(t) = intercept + slope * t."""

    slopes: np.ndarray
    intercepts: np.ndarray

    def __post_init__(self):
        self.slopes = np.atleast_1d(np.asarray(self.slopes, dtype=float))
        self.intercepts = np.atleast_1d(np.asarray(self.intercepts, dtype=float))
        if self.slopes.shape != self.intercepts.shape:
            raise ValueError("slopes/intercepts length mismatch")

    def u(self, t):
        return self.intercepts + self.slopes * t

    def as_policy(self):
        return lambda t, x: self.u(t)

    def check_box(self, box, T):
        """Verify u(t) stays inside per-channel [lo, hi] over [0, T]."""
        box = np.asarray(box, dtype=float)
        for t in (0.0, float(T)):
            ut = self.u(t)
            if np.any(ut < box[:, 0] - 1e-12) or np.any(ut > box[:, 1] + 1e-12):
                raise ValueError(f"ramp leaves input box at t={t}: u={ut}")

    def to_dict(self):
        return {"slopes": self.slopes.tolist(), "intercepts": self.intercepts.tolist()}


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray


@dataclass
class TrajectoryDataset:
    trajectories: list
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.trajectories)


def euler_maruyama(dyn, x0, policy, T, steps, seed=None, noise=None):
    """Integrate one path (x0 shape (n,)) or a batch (x0 shape (B, n)).

    `noise`, if given, must be standard-normal with shape (steps, p) or
    (steps, B, p) and replaces the seeded draw. Returns a Trajectory whose
    states have shape (steps+1, n) or (steps+1, B, n).
    """
    if steps < 1:
        raise SdeError("steps must be >= 1")
    x = np.asarray(x0, dtype=float).copy()
    batched = x.ndim == 2
    dt = float(T) / steps
    if noise is None:
        rng = np.random.default_rng(seed)
        shape = (steps, x.shape[0], dyn.p) if batched else (steps, dyn.p)
        noise = rng.standard_normal(shape)
    else:
        noise = np.asarray(noise, dtype=float)
    root = np.sqrt(2.0 * dt)
    times = dt * np.arange(steps + 1)
    states = np.empty((steps + 1,) + x.shape)
    inputs = np.empty((steps + 1,) + x.shape[:-1] + (dyn.m,))
    states[0] = x
    inputs[0] = np.broadcast_to(policy(times[0], x), inputs[0].shape)
    for k in range(steps):
        t = times[k]
        u = policy(t, x)
        fv = np.asarray(dyn.f(t, x, u), dtype=float)
        gv = np.asarray(dyn.g(t, x, u), dtype=float)
        x = x + fv * dt + root * np.squeeze(gv @ noise[k][..., :, None], axis=-1)
        if not np.all(np.isfinite(x)):
            raise SdeError(f"non-finite state at step {k + 1}")
        states[k + 1] = x
        inputs[k + 1] = np.broadcast_to(policy(times[k + 1], x), inputs[0].shape)
    return Trajectory(times, states, inputs)


def latin_hypercube(N, dims, box, seed):
    """N points in `box` with exactly one sample per axis stratum of width 1/N."""
    if N < 1:
        raise ValueError("N must be >= 1")
    box = np.asarray(box, dtype=float).reshape(dims, 2)
    rng = np.random.default_rng(seed)
    out = np.empty((N, dims))
    for d in range(dims):
        strata = rng.permutation(N)
        out[:, d] = (strata + rng.uniform(size=N)) / N
    return box[:, 0] + out * (box[:, 1] - box[:, 0])


def gaussian_box_sampler(mean, cov, box, max_tries=1000):
    """Sampler for Normal(mean, cov) truncated to an axis-aligned box; call
    with an rng, returns one state."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    box = np.asarray(box, dtype=float)
    L = np.linalg.cholesky(cov)

    def sample(rng):
        for _ in range(max_tries):
            x = mean + L @ rng.standard_normal(mean.size)
            if np.all(x >= box[:, 0]) and np.all(x <= box[:, 1]):
                return x
        raise SdeError("truncated Gaussian sampler exceeded retry budget")

    return sample


# ---------------------------------------------------------------------------
# synthetic ground truth

_KAPPA0 = 0.05
_COUPLE = 0.02
_TAMP = 0.003
_SIG0 = 0.012


def _well_force(z):
    # stable minima at 0.25 and 0.75, unstable at 0.5; cubic growth outside
    return -64.0 * (z - 0.25) * (z - 0.5) * (z - 0.75)


def _depth(ui, cross):
    # smooth, strictly positive, non-affine in the inputs
    return _KAPPA0 * (0.6 + 0.4 * np.tanh(2.0 * ui + cross))


def synthetic_truth(check_psd=False):
    """Analytic 2-state, 2-input ground truth over state box [0,1]^2."""

    def f(t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        u1, u2 = u[..., 0], u[..., 1]
        cross = u1 * u2
        f1 = (
            _depth(u1, cross) * _well_force(x1)
            + _COUPLE * (x2 - x1)
            + _TAMP * np.sin(2.0 * np.pi * t / 200.0)
        )
        f2 = (
            _depth(u2, cross) * _well_force(x2)
            + _COUPLE * (x1 - x2)
            + _TAMP * np.cos(2.0 * np.pi * t / 200.0)
        )
        return np.stack([f1, f2], axis=-1)

    def g(t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        x2 = x[..., 1]
        u1 = u[..., 0]
        s1 = _SIG0 * (1.2 - 0.5 * np.tanh(u1)) * np.ones_like(x2)
        s2 = _SIG0 * (1.0 + 0.3 * np.tanh(2.0 * (x2 - 0.5)))
        zero = np.zeros_like(s1)
        row1 = np.stack([s1, zero], axis=-1)
        row2 = np.stack([zero, s2], axis=-1)
        return np.stack([row1, row2], axis=-2)

    return ControlledDynamics(f=f, g=g, n=2, m=2, p=2, check_psd=check_psd)


# ---------------------------------------------------------------------------
# dataset generation and IO


def generate_dataset(dyn, designs, x0_sampler, T, steps, samples_per_traj, seed, threads=1):
    """One trajectory per ramp design, subsampled to equispaced records.

    Each trajectory draws noise and its initial state from an independent
    stream keyed by (seed, index), so results do not depend on scheduling.
    """
    if steps % samples_per_traj != 0:
        raise ValueError("steps must be a multiple of samples_per_traj")
    stride = steps // samples_per_traj

    def one(idx):
        design = designs[idx]
        rng = np.random.default_rng([seed, idx])
        x0 = x0_sampler(rng)
        tr = euler_maruyama(
            dyn, x0, design.as_policy(), T, steps,
            noise=rng.standard_normal((steps, dyn.p)),
        )
        keep = np.arange(samples_per_traj) * stride
        return Trajectory(tr.times[keep], tr.states[keep], tr.inputs[keep])

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as ex:
            trajectories = list(ex.map(one, range(len(designs))))
    else:
        trajectories = [one(i) for i in range(len(designs))]
    meta = {
        "seed": int(seed),
        "T": float(T),
        "steps": int(steps),
        "samples_per_traj": int(samples_per_traj),
        "n_trajectories": len(designs),
        "designs": [d.to_dict() for d in designs],
    }
    return TrajectoryDataset(trajectories, meta)


def write_trajectories_csv(path, ds):
    """CSV `traj_id,t,x1,...,xn,u1,...,um` plus metadata sidecar `<path>.json`."""
    first = ds.trajectories[0]
    n = first.states.shape[-1]
    m = first.inputs.shape[-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["traj_id", "t"]
            + [f"x{i + 1}" for i in range(n)]
            + [f"u{j + 1}" for j in range(m)]
        )
        for tid, tr in enumerate(ds.trajectories):
            for t, x, u in zip(tr.times, tr.states, tr.inputs):
                w.writerow(
                    [tid, repr(float(t))]
                    + [repr(float(v)) for v in x]
                    + [repr(float(v)) for v in u]
                )
    with open(f"{path}.json", "w") as fh:
        json.dump(ds.metadata, fh, indent=1)


def read_trajectories_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[:2] != ["traj_id", "t"]:
        raise ValueError(f"{path}: expected header traj_id,t,x...,u...")
    n = sum(1 for h in header if h.startswith("x"))
    m = sum(1 for h in header if h.startswith("u"))
    by_id = {}
    for r in rows[1:]:
        by_id.setdefault(int(r[0]), []).append([float(v) for v in r[1:]])
    trajectories = []
    for tid in sorted(by_id):
        block = np.asarray(by_id[tid])
        trajectories.append(
            Trajectory(block[:, 0], block[:, 1 : 1 + n], block[:, 1 + n : 1 + n + m])
        )
    meta = {}
    if os.path.exists(f"{path}.json"):
        with open(f"{path}.json") as fh:
            meta = json.load(fh)
    return TrajectoryDataset(trajectories, meta)
