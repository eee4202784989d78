"""Neural SDE fitting checks: split arithmetic, exact rollout on noiseless
data with the true maps, batching consistency, gradient vs finite differences,
and training-loop contracts."""

import numpy as np
import pytest

from gsbp import autodiff as ad
from gsbp.nets import Mlp, MlpSpec
from gsbp.sde import (
    ControlledDynamics,
    RampInput,
    gaussian_box_sampler,
    generate_dataset,
    latin_hypercube,
    synthetic_truth,
)
from gsbp.sdefit import (
    LOSS_SENTINEL,
    SdeFitConfig,
    SdeFitError,
    SdeModel,
    fit,
    make_windows,
    nsde_loss,
    read_history_csv,
    rollout_loss,
    split,
    windows_from_trajectory,
    wrap_dynamics_as_model,
    write_history_csv,
)


def tiny_dataset(n_traj=10, noiseless=False, seed=9):
    truth = synthetic_truth()
    if noiseless:
        dyn = ControlledDynamics(
            f=truth.f, g=lambda t, x, u: np.zeros(np.shape(x)[:-1] + (2, 2)),
            n=2, m=2, p=2,
        )
    else:
        dyn = truth
    slopes = latin_hypercube(n_traj, 2, [[-0.005, 0.005]] * 2, seed=seed)
    designs = [RampInput(s, np.zeros(2)) for s in slopes]
    sampler = gaussian_box_sampler([0.3, 0.6], 0.03**2 * np.eye(2), [[0, 1], [0, 1]])
    return dyn, generate_dataset(
        dyn, designs, sampler, T=20.0, steps=50, samples_per_traj=50, seed=seed
    )


def fake_dataset(N):
    from gsbp.sde import Trajectory, TrajectoryDataset

    t = np.arange(4.0)
    trajs = [
        Trajectory(t, np.full((4, 2), float(i)), np.zeros((4, 2))) for i in range(N)
    ]
    return TrajectoryDataset(trajs, {})


def test_split_counts_and_disjointness():
    sp = split(fake_dataset(200), seed=1)
    assert (len(sp.train), len(sp.test), len(sp.validation)) == (140, 40, 20)
    sp = split(fake_dataset(10), seed=1)
    assert (len(sp.train), len(sp.test), len(sp.validation)) == (7, 2, 1)
    ids = [
        tr.states[0, 0]
        for part in (sp.train, sp.test, sp.validation)
        for tr in part.trajectories
    ]
    assert sorted(ids) == list(range(10))
    sp2 = split(fake_dataset(10), seed=1)
    assert [t.states[0, 0] for t in sp2.train.trajectories] == [
        t.states[0, 0] for t in sp.train.trajectories
    ]
    with pytest.raises(SdeFitError, match="10"):
        split(fake_dataset(9), seed=0)


def test_window_extraction():
    _, ds = tiny_dataset()
    tr = ds.trajectories[0]
    wins = windows_from_trajectory(tr, length=10, stride=5)
    assert len(wins) == (50 - 10) // 5 + 1
    t0, x0, u0 = wins[1]
    assert np.array_equal(x0, tr.states[5:15])
    times, states, inputs = make_windows(ds.trajectories, 10, 5)
    assert states.shape == (len(ds) * len(wins), 10, 2)
    assert np.allclose(np.diff(times, axis=1), times[0, 1] - times[0, 0])


def test_true_maps_on_noiseless_data_give_zero_loss():
    dyn, ds = tiny_dataset(noiseless=True)
    model = wrap_dynamics_as_model(dyn)
    for tr in ds.trajectories[:3]:
        for window in windows_from_trajectory(tr, 10, 17):
            assert nsde_loss(model, window, shared_noise_seed=1) < 1e-8


def test_zero_nets_on_moving_data_give_positive_loss():
    _, ds = tiny_dataset()
    spec = MlpSpec(5, [8], 2)
    gspec = MlpSpec(5, [8], 4)
    model = SdeModel(
        lambda F: Mlp(spec, theta=np.zeros(spec.n_params)).forward(F),
        lambda F: Mlp(gspec, theta=np.zeros(gspec.n_params)).forward(F),
        2, 2, 2,
    )
    window = windows_from_trajectory(ds.trajectories[0], 10, 5)[0]
    assert nsde_loss(model, window, shared_noise_seed=3) > 0.0


def test_batched_loss_is_mean_of_single_window_losses():
    dyn, ds = tiny_dataset()
    model = wrap_dynamics_as_model(dyn)
    wins = windows_from_trajectory(ds.trajectories[0], 8, 11)[:3]
    times = np.stack([w[0] for w in wins])
    states = np.stack([w[1] for w in wins])
    inputs = np.stack([w[2] for w in wins])
    noise = np.random.default_rng(5).standard_normal((7, 3, 2))
    batched = float(ad.value_of(rollout_loss(model, times, states, inputs, noise)))
    singles = [
        float(
            ad.value_of(
                rollout_loss(
                    model,
                    times[i : i + 1],
                    states[i : i + 1],
                    inputs[i : i + 1],
                    noise[:, i : i + 1],
                )
            )
        )
        for i in range(3)
    ]
    assert abs(batched - np.mean(singles)) < 1e-12


def test_rollout_gradient_matches_fd():
    _, ds = tiny_dataset()
    dspec, gspec = MlpSpec(5, [6], 2), MlpSpec(5, [6], 4)
    drift, diffusion = Mlp(dspec, seed=1), Mlp(gspec, seed=2)
    nd = drift.theta.size
    theta = np.concatenate([drift.theta, diffusion.theta])
    times, states, inputs = make_windows(ds.trajectories[:2], 6, 10)
    noise = np.random.default_rng(7).standard_normal((5, times.shape[0], 2))

    def loss_of(th):
        model = SdeModel(
            lambda F: drift.forward(F, th[:nd]),
            lambda F: diffusion.forward(F, th[nd:]),
            2, 2, 2,
        )
        return rollout_loss(model, times, states, inputs, noise)

    g = ad.param_grad(loss_of, theta)
    h = 1e-6
    rng = np.random.default_rng(8)
    for i in rng.choice(theta.size, size=12, replace=False):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        fd = (float(ad.value_of(loss_of(tp))) - float(ad.value_of(loss_of(tm)))) / (2 * h)
        assert abs(g[i] - fd) <= 1e-5 * (1 + abs(fd))


def small_cfg(epochs, lr0=2e-3, seed=0):
    return SdeFitConfig(
        drift_spec=MlpSpec(5, [16], 2),
        diffusion_spec=MlpSpec(5, [16], 4),
        lr0=lr0,
        decay=0.999,
        batch_fraction=1.0,
        epochs=epochs,
        rollout_horizon=10,
        window_stride=5,
        seed=seed,
        time_scale=20.0,
    )


def test_fit_zero_epochs_returns_initialized_nets():
    _, ds = tiny_dataset()
    sp = split(ds, seed=2)
    drift, diffusion, history = fit(small_cfg(0), sp)
    assert history == []
    assert np.array_equal(drift.theta, Mlp(MlpSpec(5, [16], 2), seed=0).theta)


def test_fit_improves_and_returns_best_checkpoint():
    _, ds = tiny_dataset()
    sp = split(ds, seed=2)
    drift, diffusion, history = fit(small_cfg(60), sp)
    assert len(history) == 60
    vals = [row[2] for row in history]
    assert min(vals) <= vals[0]
    assert min(vals) <= vals[-1]
    # effective lr decays geometrically
    assert abs(history[1][3] - history[0][3] * 0.999) < 1e-15
    # best-checkpoint nets reproduce the recorded best validation loss
    times, states, inputs = make_windows(sp.validation.trajectories, 10, 5)
    vnoise = np.random.default_rng([0, 777]).standard_normal((9, times.shape[0], 2))
    nd = drift.theta.size
    model = SdeModel(
        lambda F: drift.forward(F),
        lambda F: diffusion.forward(F),
        2, 2, 2, time_scale=20.0,
    )
    re_val = float(ad.value_of(rollout_loss(model, times, states, inputs, vnoise)))
    assert abs(re_val - min(vals)) < 1e-12


def test_fit_is_deterministic():
    _, ds = tiny_dataset()
    sp = split(ds, seed=2)
    _, _, h1 = fit(small_cfg(10), sp)
    _, _, h2 = fit(small_cfg(10), sp)
    assert h1 == h2


def test_fit_divergence_aborts_with_epoch():
    # states of ~1e160 are finite but their squared error overflows, which is
    # how a diverging loss first surfaces; the loop must abort, not continue
    _, ds = tiny_dataset()
    for tr in ds.trajectories[:7]:
        tr.states *= 1e160
    sp = split(ds, seed=2)
    with np.errstate(over="ignore"):
        with pytest.raises(SdeFitError, match="epoch"):
            fit(small_cfg(5), sp)


def test_history_csv_roundtrip(tmp_path):
    hist = [(0, 0.5, 0.6, 1e-3), (1, 0.25, 0.5, 9.99e-4)]
    path = tmp_path / "h.csv"
    write_history_csv(path, hist)
    assert read_history_csv(path) == hist
