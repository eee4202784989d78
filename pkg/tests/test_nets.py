"""MLP checks: frozen layout contract, init, numeric-vs-tape agreement,
parameter gradients vs finite differences, checkpoint round trip."""

import numpy as np

from gsbp import autodiff as ad
from gsbp.nets import Mlp, MlpSpec, load_checkpoint, save_checkpoint


def test_param_count():
    assert MlpSpec(3, [5, 4], 2).n_params == (3 * 5 + 5) + (5 * 4 + 4) + (4 * 2 + 2)
    assert MlpSpec(1, [], 1).n_params == 2


def test_forward_matches_manual_layout():
    # layout contract: [W1.ravel row-major, b1, W2.ravel, b2, ...]
    spec = MlpSpec(2, [3], 2)
    rng = np.random.default_rng(1)
    theta = rng.normal(size=spec.n_params)
    net = Mlp(spec, theta=theta)
    W1 = theta[:6].reshape(2, 3)
    b1 = theta[6:9]
    W2 = theta[9:15].reshape(3, 2)
    b2 = theta[15:17]
    X = rng.uniform(-1, 1, size=(4, 2))
    expect = np.tanh(X @ W1 + b1) @ W2 + b2
    assert np.max(np.abs(net(X) - expect)) < 1e-14


def test_init_is_seeded_and_bounded():
    spec = MlpSpec(4, [8, 8], 3)
    a = Mlp(spec, seed=7).theta
    b = Mlp(spec, seed=7).theta
    c = Mlp(spec, seed=8).theta
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    # biases start at zero; weights within the uniform fan bound
    params = Mlp(spec, seed=7).unpack(a)
    for (W, bias), (nin, nout) in zip(params, [(4, 8), (8, 8), (8, 3)]):
        assert np.all(bias == 0.0)
        assert np.max(np.abs(W)) <= np.sqrt(6.0 / (nin + nout))


def test_tape_forward_equals_numeric_forward():
    spec = MlpSpec(3, [6, 5], 2)
    net = Mlp(spec, seed=3)
    X = np.random.default_rng(4).uniform(-2, 2, size=(9, 3))
    plain = net(X)
    with ad.Tape():
        th = ad.leaf(net.theta)
        xn = ad.leaf(X)
        out = ad.value_of(net(xn, th))
    assert np.array_equal(plain, out)


def test_param_gradient_matches_fd():
    spec = MlpSpec(2, [4], 1)
    net = Mlp(spec, seed=11)
    X = np.random.default_rng(12).uniform(-1, 1, size=(5, 2))

    def loss_at(theta):
        y = net(X, np.asarray(theta))
        return float(np.sum(y * y))

    g = ad.param_grad(lambda th: ad.asum(ad.power(net(X, th), 2.0)), net.theta)
    h = 1e-6
    gfd = np.zeros_like(net.theta)
    for i in range(net.theta.size):
        tp, tm = net.theta.copy(), net.theta.copy()
        tp[i] += h
        tm[i] -= h
        gfd[i] = (loss_at(tp) - loss_at(tm)) / (2 * h)
    assert np.max(np.abs(g - gfd)) <= 1e-6 * (1 + np.max(np.abs(gfd)))


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    spec = MlpSpec(3, [7], 2)
    net = Mlp(spec, seed=5)
    net.theta[3] = np.nextafter(net.theta[3], np.inf)  # non-round value
    path = tmp_path / "ck.json"
    save_checkpoint(path, net, extra={"epoch": 12, "note": [1, 2]})
    loaded, extra = load_checkpoint(path)
    assert loaded.spec == spec
    assert np.array_equal(loaded.theta, net.theta)
    assert loaded.theta.tobytes() == net.theta.tobytes()
    assert extra == {"epoch": 12, "note": [1, 2]}
