import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfdispatch import neuralnet as nn
from mfdispatch.hexworld import DomainError


def numeric_grads(p, x, upstream, h=1e-6):
    out = []
    for a in p.arrays():
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            up = np.sum(upstream * nn.forward(p, x))
            a[i] = old - h
            down = np.sum(upstream * nn.forward(p, x))
            a[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


@pytest.mark.parametrize("act", ["relu", "sigmoid", "identity"])
def test_backward_matches_finite_differences(act):
    rng = np.random.default_rng(1)
    p = nn.init_mlp([4, 6, 3, 2], rng, act)
    for arr in p.biases:
        arr += rng.normal(0, 0.1, arr.shape)
    x = rng.normal(size=(5, 4))
    up = rng.normal(size=(5, 2))
    g, _ = nn.backward(p, x, up)
    for a, b in zip(g.arrays(), numeric_grads(p, x, up)):
        np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-7)


def test_input_gradient():
    rng = np.random.default_rng(2)
    p = nn.init_mlp([3, 5, 1], rng, "sigmoid")
    x = rng.normal(size=3)
    _, dx = nn.backward(p, x, np.ones(1))
    h = 1e-6
    num = [(nn.forward(p, x + h * e)[0] - nn.forward(p, x - h * e)[0]) / (2 * h) for e in np.eye(3)]
    np.testing.assert_allclose(dx, num, rtol=1e-5, atol=1e-8)


def test_single_and_batch_shapes():
    p = nn.init_mlp([3, 4, 2], np.random.default_rng(0))
    assert nn.forward(p, np.zeros(3)).shape == (2,)
    assert nn.forward(p, np.zeros((7, 3))).shape == (7, 2)
    with pytest.raises(DomainError):
        nn.forward(p, np.zeros(4))


def test_sigmoid_output_range_and_no_overflow():
    p = nn.init_mlp([1, 1], np.random.default_rng(0), "sigmoid")
    p.weights[0][:] = 1000.0
    with np.errstate(over="raise", invalid="raise"):
        y = nn.forward(p, np.array([[-5.0], [5.0]]))
    assert y[0, 0] == pytest.approx(0.0) and y[1, 0] == pytest.approx(1.0)


def test_glorot_bounds():
    p = nn.init_mlp([30, 20], np.random.default_rng(0))
    assert np.abs(p.weights[0]).max() <= np.sqrt(6 / 50)
    assert not p.biases[0].any()


def test_adam_first_step_moves_by_lr_times_sign():
    p = nn.init_mlp([2, 1], np.random.default_rng(0))
    s = nn.AdamState.for_params(p)
    g = nn.Gradients([np.array([[1.0], [-2.0]])], [np.array([0.5])])
    s2, p2 = nn.adam_step(s, p, g, 0.01)
    np.testing.assert_allclose(p2.weights[0] - p.weights[0], [[-0.01], [0.01]], rtol=1e-6)
    assert s2.step == 1


def test_adam_zero_gradient_leaves_params():
    p = nn.init_mlp([2, 3, 1], np.random.default_rng(0))
    s = nn.AdamState.for_params(p)
    zero = nn.Gradients([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases])
    _, p2 = nn.adam_step(s, p, zero, 0.1)
    for a, b in zip(p.arrays(), p2.arrays()):
        np.testing.assert_array_equal(a, b)


def test_adam_rejects_nan():
    p = nn.init_mlp([1, 1], np.random.default_rng(0))
    bad = nn.Gradients([np.array([[np.nan]])], [np.zeros(1)])
    with pytest.raises(nn.NumericError):
        nn.adam_step(nn.AdamState.for_params(p), p, bad, 0.1)


def test_adam_fits_linear_regression():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(64, 2))
    y = x @ np.array([[2.0], [-1.0]]) + 0.5
    p = nn.init_mlp([2, 1], rng)
    s = nn.AdamState.for_params(p)
    for _ in range(2000):
        err = nn.forward(p, x) - y
        g, _ = nn.backward(p, x, 2 * err / len(x))
        s, p = nn.adam_step(s, p, g, 0.05)
    assert np.mean((nn.forward(p, x) - y) ** 2) < 1e-6


def test_soft_update():
    rng = np.random.default_rng(0)
    a = nn.init_mlp([2, 2], rng)
    b = nn.init_mlp([2, 2], rng)
    assert np.array_equal(nn.soft_update(a, b, 1.0).weights[0], b.weights[0])
    assert np.array_equal(nn.soft_update(a, b, 0.0).weights[0], a.weights[0])
    with pytest.raises(DomainError):
        nn.soft_update(a, nn.init_mlp([2, 3], rng), 0.5)


def test_checkpoint_roundtrip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    p = nn.init_mlp([3, 4, 1], rng, "sigmoid")
    s = nn.AdamState.for_params(p)
    g, _ = nn.backward(p, rng.normal(size=(2, 3)), np.ones((2, 1)))
    s, p = nn.adam_step(s, p, g, 0.01)
    nn.save_checkpoint(tmp_path / "c.json", p, s)
    p2, s2 = nn.load_checkpoint(tmp_path / "c.json")
    for a, b in zip(p.arrays() + s.m + s.v, p2.arrays() + s2.m + s2.v):
        np.testing.assert_array_equal(a, b)
    assert p2.output_activation == "sigmoid" and s2.step == 1


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=2, max_size=4), st.integers(0, 2**31))
def test_forward_is_finite_and_row_independent(sizes, seed):
    rng = np.random.default_rng(seed)
    p = nn.init_mlp(sizes, rng, "sigmoid")
    x = rng.normal(size=(4, sizes[0]))
    full = nn.forward(p, x)
    assert np.all(np.isfinite(full))
    np.testing.assert_allclose(full[2], nn.forward(p, x[2]), rtol=0, atol=1e-15)
