from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rpdct import neuralnet as nn


def oracle_forward(w1, w2, x):
    hid = [np.tanh(sum(w1[i, k] * x[k] for k in range(len(x))) + w1[i, -1]) for i in range(w1.shape[0])]
    return np.array([np.tanh(sum(w2[o, i] * hid[i] for i in range(len(hid))) + w2[o, -1]) for o in range(w2.shape[0])])


def loss(net, x, t):
    e = nn.forward(net, x) - t
    return 0.5 * float(e @ e)


def fd_gradient(net, x, t, step=1e-5):
    out = []
    for which in ("hidden_weights", "output_weights"):
        w = getattr(net, which)
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            plus, minus = w.copy(), w.copy()
            plus[idx] += step
            minus[idx] -= step
            mk = (lambda m: nn.Mlp(m, net.output_weights)) if which == "hidden_weights" else (lambda m: nn.Mlp(net.hidden_weights, m))
            g[idx] = (loss(mk(plus), x, t) - loss(mk(minus), x, t)) / (2 * step)
        out.append(g)
    return out


def test_init_shapes_and_determinism():
    a = nn.init_mlp(4, 8, 3, seed=1)
    assert a.hidden_weights.shape == (8, 5) and a.output_weights.shape == (3, 9)
    assert a == nn.init_mlp(4, 8, 3, seed=1)
    assert a != nn.init_mlp(4, 8, 3, seed=2)
    assert np.abs(a.hidden_weights).max() <= 1 / 2
    with pytest.raises(nn.NetworkError):
        nn.init_mlp(0, 8, 3, seed=1)


def test_forward_trivial():
    zero = nn.Mlp(np.zeros((8, 5)), np.zeros((3, 9)))
    np.testing.assert_array_equal(nn.forward(zero, np.ones(4)), 0.0)
    unit = nn.Mlp([[1.0, 0.0]], [[1.0, 0.0]])
    assert nn.forward(unit, [0.0])[0] == 0.0
    with pytest.raises(nn.NetworkError):
        nn.forward(zero, np.ones(5))


@given(st.integers(0, 2**32 - 1))
def test_forward_matches_oracle(seed):
    net = nn.init_mlp(4, 8, 3, seed, scale=3.0)
    x = np.random.default_rng(seed).normal(size=4)
    out = nn.forward(net, x)
    np.testing.assert_allclose(out, oracle_forward(net.hidden_weights, net.output_weights, x), atol=1e-12)
    assert (np.abs(out) < 1).all()


def test_gradient_matches_finite_differences_100_pairs():
    rng = np.random.default_rng(42)
    worst = 0.0
    for k in range(100):
        net = nn.init_mlp(4, 8, 3, seed=k, scale=2.0)
        x, t = rng.normal(size=4), rng.uniform(-0.9, 0.9, size=3)
        for g, f in zip(nn.gradient(net, x, t), fd_gradient(net, x, t)):
            mask = (np.abs(g) > 1e-8) | (np.abs(f) > 1e-8)
            if mask.any():
                rel = np.abs(g - f)[mask] / np.maximum(np.abs(g), np.abs(f))[mask]
                worst = max(worst, float(rel.max()))
    assert worst < 1e-4


def test_gradient_zero_at_target():
    net = nn.init_mlp(4, 8, 3, seed=0)
    x = np.arange(4.0)
    for g in nn.gradient(net, x, nn.forward(net, x)):
        np.testing.assert_allclose(g, 0.0, atol=1e-12)


def test_gradient_antisymmetric_about_zero_output():
    rng = np.random.default_rng(5)
    w1 = rng.normal(size=(8, 5))
    net = nn.Mlp(w1, np.zeros((3, 9)))  # output exactly 0 for any input
    x, d = rng.normal(size=4), rng.normal(size=3)
    g_plus, g_minus = nn.gradient(net, x, d), nn.gradient(net, x, -d)
    for a, b in zip(g_plus, g_minus):
        np.testing.assert_array_equal(a, -b)


def test_xor():
    x = np.array([[-1, -1], [-1, 1], [1, -1], [1, 1]], dtype=float)
    t = np.array([[-0.9], [0.9], [0.9], [-0.9]])
    res = nn.train(nn.init_mlp(2, 8, 1, seed=3), x, t, nn.TrainConfig(learning_rate=0.05, max_epochs=5000))
    assert (np.sign(nn.forward(res.net, x)) == np.sign(t)).all()


def test_single_sample_monotone_at_small_lr():
    net = nn.init_mlp(5, 6, 2, seed=9)
    x, t = np.ones((1, 5)), np.array([[0.5, -0.5]])
    res = nn.train(net, x, t, nn.TrainConfig(learning_rate=1e-3, momentum=0.0, max_epochs=10, target_mse=1e-12))
    assert all(b < a for a, b in zip(res.mse_trace, res.mse_trace[1:]))


def test_separable_toy_reaches_target():
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(-1, 0.3, size=(20, 3)), rng.normal(1, 0.3, size=(20, 3))])
    t = np.r_[np.full(20, -0.9), np.full(20, 0.9)][:, None]
    res = nn.train(nn.init_mlp(3, 4, 1, seed=1), x, t, nn.TrainConfig(target_mse=1e-2, max_epochs=2000))
    assert res.final_mse <= 1e-2


def test_regression_to_mean():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(10, 6))
    t = np.tile(np.tanh(x.mean(0))[:3] * 0.5, (10, 1))
    res = nn.train(nn.init_mlp(6, 6, 3, seed=0), x, t, nn.TrainConfig(target_mse=1e-4))
    assert np.mean((nn.forward(res.net, x) - t) ** 2) <= 1e-3


def test_training_deterministic():
    rng = np.random.default_rng(1)
    x, t = rng.normal(size=(12, 3)), rng.uniform(-0.9, 0.9, size=(12, 2))
    cfg = nn.TrainConfig(max_epochs=50, seed=4)
    a = nn.train(nn.init_mlp(3, 5, 2, 0), x, t, cfg)
    b = nn.train(nn.init_mlp(3, 5, 2, 0), x, t, cfg)
    assert a.net == b.net and a.mse_trace == b.mse_trace


def test_train_errors():
    net = nn.init_mlp(3, 5, 2, 0)
    with pytest.raises(nn.NetworkError):
        nn.train(net, np.zeros((0, 3)), np.zeros((0, 2)), nn.TrainConfig())
    with pytest.raises(nn.NetworkError):
        nn.TrainConfig(learning_rate=0)
    with pytest.raises(nn.TrainingDivergedError):
        nn.train(net, np.full((2, 3), np.nan), np.zeros((2, 2)), nn.TrainConfig(max_epochs=2))


@given(st.integers(0, 2**32 - 1))
def test_save_load_roundtrip(seed):
    net = nn.init_mlp(4, 7, 3, seed)
    back = nn.load(nn.save(net))
    assert back == net
    x = np.random.default_rng(seed).normal(size=4)
    np.testing.assert_array_equal(nn.forward(back, x), nn.forward(net, x))


@pytest.mark.parametrize("payload", [b"not json", b"[1,2]", b'{"schema":2}', b'{"schema":1,"dims":[2,2,2],"hidden_weights":[1]}'])
def test_load_rejects_corrupt(payload):
    with pytest.raises(nn.NetworkError):
        nn.load(payload)
