import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aif_fl.learner import (
    MlpArch,
    MlpParams,
    TimingProvider,
    backprop_gradients,
    cross_entropy,
    evaluate,
    fedavg,
    forward,
    init_mlp,
    load_params,
    save_params,
    train_epochs,
)

ARCH = MlpArch(4, (6, 5), 3)


def toy_separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    return X, y


def test_init_deterministic_and_bounded():
    a, b = init_mlp(ARCH, 3), init_mlp(ARCH, 3)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    sizes = ARCH.layer_sizes
    for W, bias, fan_in, fan_out in zip(a.weights, a.biases, sizes[:-1], sizes[1:]):
        assert W.shape == (fan_in, fan_out)
        assert np.all(np.abs(W) <= np.sqrt(6 / (fan_in + fan_out)))
        assert not bias.any()


def test_forward_properties():
    zero = MlpParams([np.zeros_like(w) for w in init_mlp(ARCH, 0).weights], [np.zeros_like(b) for b in init_mlp(ARCH, 0).biases])
    X = np.random.default_rng(1).normal(size=(7, 4))
    np.testing.assert_allclose(forward(zero, X), 1 / 3)
    p = init_mlp(ARCH, 2)
    probs = forward(p, X)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    shifted = p.copy()
    shifted.biases[-1] += 5.0
    np.testing.assert_allclose(forward(shifted, X), probs, atol=1e-12)
    with pytest.raises(ValueError):
        forward(p, np.zeros((2, 3)))


def numeric_grad(params, X, y, h=1e-4):
    grads = []
    for arr in params.arrays():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = cross_entropy(params, X, y)
            arr[idx] = old - h
            down = cross_entropy(params, X, y)
            arr[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def test_gradient_check():
    rng = np.random.default_rng(5)
    params = init_mlp(ARCH, 5)
    for b in params.biases:
        b[:] = rng.normal(scale=0.1, size=b.shape)  # keep ReLUs away from their kink
    X = rng.normal(size=(8, 4))
    y = rng.integers(0, 3, size=8)
    grads, loss = backprop_gradients(params, X, y)
    assert loss == pytest.approx(cross_entropy(params, X, y))
    for exact, approx in zip(grads.arrays(), numeric_grad(params, X, y)):
        assert exact.shape == approx.shape
        scale = np.maximum(np.abs(exact), np.abs(approx))
        big = scale > 1e-6
        rel = np.abs(exact - approx)[big] / scale[big]
        assert rel.max(initial=0.0) < 1e-4
        assert np.abs(exact - approx)[~big].max(initial=0.0) < 1e-9


def test_duplicated_batch_same_gradient():
    params = init_mlp(ARCH, 6)
    X, y = toy_separable(10)
    g1, _ = backprop_gradients(params, X, y)
    g2, _ = backprop_gradients(params, np.vstack([X, X]), np.concatenate([y, y]))
    for a, b in zip(g1.arrays(), g2.arrays()):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_loss_decreases_on_separable_data():
    X, y = toy_separable()
    arch = MlpArch(4, (16, 8), 2)
    report = train_epochs(init_mlp(arch, 0), X, y, batch_size=16, learning_rate=0.05, epochs=3, seed=1)
    losses = report.epoch_losses
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert report.duration >= 0


def test_zero_learning_rate_is_identity():
    X, y = toy_separable(30)
    p = init_mlp(MlpArch(4, (6, 5), 2), 1)
    out = train_epochs(p, X, y, 8, 0.0, 2, seed=0).final_params
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), out.arrays()))


def test_training_deterministic_and_copies():
    X, y = toy_separable(50)
    p = init_mlp(MlpArch(4, (6, 5), 2), 2)
    snapshot = [a.copy() for a in p.arrays()]
    a = train_epochs(p, X, y, 8, 0.01, 3, seed=4).final_params
    b = train_epochs(p, X, y, 8, 0.01, 3, seed=4).final_params
    assert all(np.array_equal(x, z) for x, z in zip(a.arrays(), b.arrays()))
    assert all(np.array_equal(x, z) for x, z in zip(p.arrays(), snapshot))


def test_synthetic_timing():
    X, y = toy_separable(50)
    timing = TimingProvider(lambda n, bs, ep: n * 0.01 + bs + ep)
    rep = train_epochs(init_mlp(MlpArch(4, (6, 5), 2), 0), X, y, 8, 0.01, 3, timing, seed=0)
    assert rep.duration == 50 * 0.01 + 8 + 3
    assert timing.mode == "synthetic" and TimingProvider().mode == "measured"


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train_epochs(init_mlp(ARCH, 0), np.zeros((0, 4)), np.zeros(0, dtype=int), 8, 0.1, 1)
    with pytest.raises(ValueError):
        evaluate(init_mlp(ARCH, 0), np.zeros((0, 4)), np.zeros(0, dtype=int))


def test_evaluate():
    arch = MlpArch(2, (2, 2), 2)
    p = MlpParams([np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2))], [np.zeros(2), np.zeros(2), np.array([1.0, 0.0])])
    X = np.zeros((4, 2))
    assert evaluate(p, X, np.array([0, 1, 0, 1])) == 0.5
    assert evaluate(p, X, np.array([0, 0, 0, 0])) == 1.0
    assert arch.layer_sizes == [2, 2, 2, 2]


def test_fedavg_examples():
    p = init_mlp(ARCH, 0)
    same = fedavg([(p, 10), (p.copy(), 30), (p.copy(), 5)])
    assert all(np.array_equal(a, b) for a, b in zip(same.arrays(), p.arrays()))

    zero = MlpParams([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases])
    four = MlpParams([np.full_like(w, 4.0) for w in p.weights], [np.full_like(b, 4.0) for b in p.biases])
    avg = fedavg([(zero, 1), (four, 3)])
    for a in avg.arrays():
        np.testing.assert_allclose(a, 3.0)

    with pytest.raises(ValueError):
        fedavg([])
    with pytest.raises(ValueError):
        fedavg([(p, 1), (init_mlp(MlpArch(4, (5, 5), 3), 0), 1)])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_fedavg_permutation_and_convexity(seed):
    rng = np.random.default_rng(seed)
    models = [(init_mlp(ARCH, int(rng.integers(1000))), int(rng.integers(1, 50))) for _ in range(int(rng.integers(2, 6)))]
    a = fedavg(models)
    b = fedavg([models[i] for i in rng.permutation(len(models))])
    for x, z in zip(a.arrays(), b.arrays()):
        assert np.array_equal(x, z)
    for i, arr in enumerate(a.arrays()):
        stack = np.stack([m.arrays()[i] for m, _ in models])
        assert np.all(arr >= stack.min(axis=0) - 1e-12) and np.all(arr <= stack.max(axis=0) + 1e-12)


def test_checkpoint_round_trip(tmp_path):
    p = init_mlp(ARCH, 9)
    save_params(tmp_path / "m.npz", p)
    q = load_params(tmp_path / "m.npz")
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), q.arrays()))
