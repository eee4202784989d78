"""Fit drift/diffusion networks to trajectory data as a controlled neural SDE.

Training rolls the learnt SDE through short windows of recorded samples with
the same explicit scheme used for data generation, under a seed-fixed noise
path, and minimizes the mean squared error against the recorded states at
every step of the window. Windows are batched into one computation graph, so
thread counts cannot change the arithmetic.

Both networks read the feature vector [t/time_scale, x, u]; the diffusion
net's flat output is reshaped to (n, p). The split is by whole trajectory
(70/20/10 train/test/validation) so no window leaks across partitions.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .nets import Mlp
from .optim import Adam, OptimError
from .sde import TrajectoryDataset

__all__ = [
    "SdeFitConfig",
    "SdeFitError",
    "SdeModel",
    "SplitDataset",
    "fit",
    "make_windows",
    "nsde_loss",
    "read_history_csv",
    "rollout_loss",
    "split",
    "windows_from_trajectory",
    "wrap_dynamics_as_model",
    "write_history_csv",
]

log = logging.getLogger(__name__)

LOSS_SENTINEL = 1e10


class SdeFitError(RuntimeError):
    pass


@dataclass
class SdeFitConfig:
    drift_spec: object
    diffusion_spec: object
    lr0: float = 1e-3
    decay: float = 0.999
    batch_fraction: float = 0.25
    epochs: int = 100
    rollout_horizon: int = 10  # samples per training window
    window_stride: int = 5
    seed: int = 0
    time_scale: float = 200.0

    def __post_init__(self):
        if not (0.0 < self.batch_fraction <= 1.0):
            raise ValueError("batch_fraction must be in (0, 1]")
        if self.rollout_horizon < 2:
            raise ValueError("rollout_horizon must be >= 2")


@dataclass
class SplitDataset:
    train: TrajectoryDataset
    test: TrajectoryDataset
    validation: TrajectoryDataset


def split(ds, seed):
    """Shuffle whole trajectories into 70/20/10 train/test/validation."""
    N = len(ds)
    if N < 10:
        raise SdeFitError(f"need >= 10 trajectories to split, got {N}")
    idx = np.random.default_rng(seed).permutation(N)
    n_train = int(round(0.7 * N))
    n_test = int(round(0.2 * N))
    parts = (
        idx[:n_train],
        idx[n_train : n_train + n_test],
        idx[n_train + n_test :],
    )
    sets = [
        TrajectoryDataset([ds.trajectories[i] for i in part], dict(ds.metadata))
        for part in parts
    ]
    return SplitDataset(*sets)


class SdeModel:
    """Drift/diffusion maps built from two feature-space networks.

    drift_net/diffusion_net map a feature matrix (B, 1+n+m) to (B, n) and
    (B, n*p); they may be closures over tape nodes, in which case every method
    returns nodes.
    """

    def __init__(self, drift_net, diffusion_net, n, m, p, time_scale=200.0):
        self.drift_net = drift_net
        self.diffusion_net = diffusion_net
        self.n = int(n)
        self.m = int(m)
        self.p = int(p)
        self.time_scale = float(time_scale)

    def features(self, t, x, u):
        B = _shape0(x)
        t = np.asarray(t, dtype=float) / self.time_scale
        tcol = np.broadcast_to(t.reshape(-1, 1) if t.ndim else t, (B, 1)).copy()
        u = np.broadcast_to(u, (B, self.m)) if not isinstance(u, ad.Node) else u
        return ad.concat([tcol, x, u])

    def f(self, t, x, u):
        return self.drift_net(self.features(t, x, u))

    def g(self, t, x, u):
        B = _shape0(x)
        return ad.reshape(self.diffusion_net(self.features(t, x, u)), (B, self.n, self.p))


def _shape0(x):
    return (x.shape if isinstance(x, ad.Node) else np.shape(x))[0]


def wrap_dynamics_as_model(dyn):
    """Expose analytic dynamics through the SdeModel call convention (for
    oracle checks of the rollout loss)."""

    class _Wrap:
        n, m, p = dyn.n, dyn.m, dyn.p

        @staticmethod
        def f(t, x, u):
            return dyn.f(np.asarray(t), x, np.broadcast_to(u, (np.shape(x)[0], dyn.m)))

        @staticmethod
        def g(t, x, u):
            return dyn.g(np.asarray(t), x, np.broadcast_to(u, (np.shape(x)[0], dyn.m)))

    return _Wrap()


def windows_from_trajectory(tr, length, stride):
    out = []
    L = tr.times.shape[0]
    for start in range(0, L - length + 1, stride):
        sl = slice(start, start + length)
        out.append((tr.times[sl], tr.states[sl], tr.inputs[sl]))
    return out


def make_windows(trajectories, length, stride):
    """Stack training windows: times (W, L), states (W, L, n), inputs (W, L, m)."""
    wins = []
    for tr in trajectories:
        wins.extend(windows_from_trajectory(tr, length, stride))
    if not wins:
        raise SdeFitError("no windows: trajectories shorter than rollout horizon")
    times = np.stack([w[0] for w in wins])
    states = np.stack([w[1] for w in wins])
    inputs = np.stack([w[2] for w in wins])
    dts = np.diff(times, axis=1)
    if not np.allclose(dts, dts[0, 0], atol=1e-9):
        raise SdeFitError("windows have non-uniform time spacing")
    return times, states, inputs


def rollout_loss(model, times, states, inputs, noise):
    """Mean squared state error of the model rolled through each window.

    Starts from the recorded first state, advances with the explicit scheme
    under the recorded inputs and the given standard-normal noise of shape
    (L-1, W, p), and averages the squared error over windows, recorded times,
    and state dimensions. Works on arrays or tape nodes.
    """
    W, L, n = states.shape
    dt = float(times[0, 1] - times[0, 0])
    root = np.sqrt(2.0 * dt)
    x = states[:, 0]
    acc = 0.0
    for k in range(L - 1):
        fv = model.f(times[:, k], x, inputs[:, k])
        gv = model.g(times[:, k], x, inputs[:, k])
        kick = ad.reshape(ad.matmul(gv, noise[k].reshape(W, -1, 1)), (W, n))
        x = ad.add(x, ad.add(ad.mul(fv, dt), ad.mul(root, kick)))
        if not isinstance(x, ad.Node) and not np.all(np.isfinite(x)):
            raise SdeFitError(f"non-finite rollout state at window step {k + 1}")
        err = ad.sub(x, states[:, k + 1])
        acc = ad.add(acc, ad.asum(ad.mul(err, err)))
    return ad.div(acc, float(W * (L - 1) * n))


def nsde_loss(model, window, shared_noise_seed):
    """Loss of one trajectory window; non-finite rollouts return a large
    sentinel with a logged diagnostic instead of propagating."""
    times, states, inputs = window
    times = np.asarray(times)[None, :]
    states = np.asarray(states)[None, :, :]
    inputs = np.asarray(inputs)[None, :, :]
    L = times.shape[1]
    noise = np.random.default_rng(shared_noise_seed).standard_normal(
        (L - 1, 1, model.p)
    )
    try:
        return float(ad.value_of(rollout_loss(model, times, states, inputs, noise)))
    except (SdeFitError, ad.AutodiffError) as e:
        log.warning("window rollout diverged (%s); returning sentinel", e)
        return LOSS_SENTINEL


def _model_dims(cfg, states, inputs):
    n = states.shape[-1]
    m = inputs.shape[-1]
    if cfg.drift_spec.in_dim != 1 + n + m or cfg.diffusion_spec.in_dim != 1 + n + m:
        raise SdeFitError(f"net input dims must be 1+n+m = {1 + n + m}")
    if cfg.drift_spec.out_dim != n:
        raise SdeFitError(f"drift output dim must be n = {n}")
    if cfg.diffusion_spec.out_dim % n != 0:
        raise SdeFitError("diffusion output dim must be a multiple of n")
    return n, m, cfg.diffusion_spec.out_dim // n


def fit(cfg, ds):
    """Adam loop over batched window rollouts; returns the best-validation
    parameters as (drift_net, diffusion_net, history). History rows are
    (epoch, train_loss, val_loss, lr)."""
    drift = Mlp(cfg.drift_spec, seed=cfg.seed)
    diffusion = Mlp(cfg.diffusion_spec, seed=cfg.seed + 1)
    history = []
    if cfg.epochs == 0:
        return drift, diffusion, history

    times, states, inputs = make_windows(
        ds.train.trajectories, cfg.rollout_horizon, cfg.window_stride
    )
    vtimes, vstates, vinputs = make_windows(
        ds.validation.trajectories, cfg.rollout_horizon, cfg.window_stride
    )
    n, m, p = _model_dims(cfg, states, inputs)
    W, L = times.shape
    Wb = max(1, int(np.ceil(cfg.batch_fraction * W)))

    theta = np.concatenate([drift.theta, diffusion.theta])
    nd = drift.theta.size
    opt = Adam(lr=cfg.lr0, decay=cfg.decay)
    rng = np.random.default_rng([cfg.seed, 101])
    vnoise = np.random.default_rng([cfg.seed, 777]).standard_normal(
        (L - 1, vtimes.shape[0], p)
    )

    def numeric_model(th):
        return SdeModel(
            lambda F: drift.forward(F, th[:nd]),
            lambda F: diffusion.forward(F, th[nd:]),
            n, m, p, cfg.time_scale,
        )

    best = (np.inf, theta.copy(), -1)
    for epoch in range(cfg.epochs):
        pick = rng.permutation(W)[:Wb]
        noise = rng.standard_normal((L - 1, Wb, p))
        lr_now = opt.effective_lr
        try:
            with ad.Tape():
                th = ad.leaf(theta)
                model = SdeModel(
                    lambda F: drift.forward(F, th[:nd]),
                    lambda F: diffusion.forward(F, th[nd:]),
                    n, m, p, cfg.time_scale,
                )
                loss = rollout_loss(model, times[pick], states[pick], inputs[pick], noise)
                (gth,) = ad.backward(loss, [th])
            train_loss = float(ad.value_of(loss))
            theta = opt.step(theta, np.asarray(ad.value_of(gth)))
        except (ad.AutodiffError, SdeFitError, OptimError) as e:
            raise SdeFitError(f"training diverged at epoch {epoch}: {e}") from e
        val_loss = float(
            ad.value_of(rollout_loss(numeric_model(theta), vtimes, vstates, vinputs, vnoise))
        )
        history.append((epoch, train_loss, val_loss, lr_now))
        if val_loss < best[0]:
            best = (val_loss, theta.copy(), epoch)

    theta_best = best[1]
    return (
        Mlp(cfg.drift_spec, theta=theta_best[:nd]),
        Mlp(cfg.diffusion_spec, theta=theta_best[nd:]),
        history,
    )


def write_history_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for row in history:
            w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def read_history_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return [
        (int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in rows[1:]
    ]
