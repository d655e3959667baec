import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from groundprobe import nn

finite = st.floats(-50, 50, allow_nan=False, width=64)


@given(arrays(np.float64, (5, 3), elements=finite))
def test_softmax_is_distribution(z):
    p = nn.softmax(z)
    assert (p >= 0).all()
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)


@given(arrays(np.float64, (4, 2), elements=finite), st.floats(-100, 100))
def test_softmax_shift_invariant(z, k):
    assert np.allclose(nn.softmax(z), nn.softmax(z + k), atol=1e-12)


def test_log_softmax_matches_log_of_softmax():
    z = np.random.default_rng(0).standard_normal((6, 4)) * 5
    assert np.allclose(nn.log_softmax(z), np.log(nn.softmax(z)))


def test_cross_entropy_uniform():
    loss, grad = nn.cross_entropy(np.zeros((4, 2)), np.array([0, 1, 0, 1]))
    assert loss == pytest.approx(math.log(2))
    assert np.allclose(grad.sum(axis=0), 0.0)


def test_param_count():
    assert nn.mlp_param_count(64, ()) == 130
    assert nn.mlp_param_count(64, (10,)) == 64 * 10 + 10 + 10 * 2 + 2
    assert nn.mlp_param_count(64, (256, 256)) == 82946


@pytest.mark.parametrize("hidden", [(), (7,), (5, 5)])
def test_mlp_gradients_match_finite_differences(hidden):
    rng = np.random.default_rng(1)
    params = nn.init_mlp(rng, 6, hidden, 2)
    x = rng.standard_normal((9, 6))
    y = rng.integers(0, 2, 9)
    n_layers = len(hidden) + 1

    def f(p):
        logits, acts = nn.mlp_forward(p, x, n_layers)
        loss, d = nn.cross_entropy(logits, y)
        g, _ = nn.mlp_backward(p, acts, d, n_layers)
        return loss, g

    assert nn.check_gradients(params, f, 1e-5, 100) < 1e-5


def test_input_gradient():
    rng = np.random.default_rng(2)
    params = nn.init_mlp(rng, 4, (3,), 2)
    x = rng.standard_normal((2, 4))
    y = np.array([0, 1])
    logits, acts = nn.mlp_forward(params, x, 2)
    _, d = nn.cross_entropy(logits, y)
    _, dx = nn.mlp_backward(params, acts, d, 2)
    eps = 1e-6
    for i in range(2):
        for j in range(4):
            xp, xm = x.copy(), x.copy()
            xp[i, j] += eps
            xm[i, j] -= eps
            num = (nn.cross_entropy(nn.mlp_forward(params, xp, 2)[0], y)[0]
                   - nn.cross_entropy(nn.mlp_forward(params, xm, 2)[0], y)[0]) / (2 * eps)
            assert dx[i, j] == pytest.approx(num, rel=1e-4, abs=1e-9)


def test_relative_error_metric():
    assert nn.relative_error(0.0, 0.0) == 0.0
    assert nn.relative_error(1.0, -1.0) == pytest.approx(1.0)
    assert nn.relative_error(2.0, 1.0) == pytest.approx(1 / 3)


def test_check_gradients_epsilon_range():
    with pytest.raises(ValueError):
        nn.check_gradients({}, lambda p: (0.0, {}), epsilon=1e-2)


def test_sgd_and_adam_reduce_quadratic():
    for opt in (nn.SGD(0.1), nn.Adam(0.1)):
        p = {"w": np.array([3.0, -2.0])}
        for _ in range(200):
            opt.step(p, {"w": 2 * p["w"]})
        assert np.abs(p["w"]).max() < 1e-2
