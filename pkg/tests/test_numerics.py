import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xlstm_np import numerics as nx
from xlstm_np.gradcheck import numerical_grad, rel_error


def test_activation_fixed_points():
    assert nx.activation(np.array(0.0), "sigmoid") == 0.5
    assert nx.activation(np.array(0.0), "exp") == 1.0
    assert nx.activation(np.array(0.0), "swish") == 0.0
    assert nx.activation(np.array(1.5), "identity") == 1.5


@pytest.mark.parametrize("kind", ["sigmoid", "tanh", "exp", "gelu", "swish", "identity"])
def test_activation_grad_matches_fd(kind):
    x = np.array([-2.0, 0.0, 3.0, 0.7])
    dy = np.array([1.0, -0.5, 2.0, 0.3])
    xs = x.copy()
    num = numerical_grad(lambda: float((nx.activation(xs, kind) * dy).sum()), xs)
    assert rel_error(nx.activation_grad(x, kind, dy), num) < 1e-6


def test_exp_overflow_reports_index():
    x = np.array([[0.0, 1.0], [800.0, 2.0]])
    with pytest.raises(nx.NumericOverflowError) as info:
        nx.activation(x, "exp")
    assert info.value.index == (1, 0)


def test_unknown_activation():
    with pytest.raises(ValueError):
        nx.activation(np.zeros(2), "relu6")


def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(7, 3))
    y = nx.causal_conv1d(x, np.ones((1, 3)), np.zeros(3))
    np.testing.assert_array_equal(y, x)


def test_conv_impulse_response():
    # direct convolution by hand: an impulse at t=0 reads out the kernel reversed
    k = np.array([[1.0], [2.0], [3.0], [4.0]])
    x = np.zeros((6, 1))
    x[0, 0] = 1.0
    y = nx.causal_conv1d(x, k)
    np.testing.assert_array_equal(y[:, 0], [4.0, 3.0, 2.0, 1.0, 0.0, 0.0])


def test_conv_is_causal():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(10, 4))
    k = rng.normal(size=(4, 4))
    y0 = nx.causal_conv1d(x, k)
    x[6] += 5.0
    y1 = nx.causal_conv1d(x, k)
    np.testing.assert_array_equal(y0[:6], y1[:6])
    assert not np.allclose(y0[6:], y1[6:])


def test_conv_shape_mismatch():
    with pytest.raises(ValueError):
        nx.causal_conv1d(np.zeros((5, 3)), np.zeros((4, 2)))


def test_group_norm_examples():
    y, _ = nx.group_norm(np.full((2, 8), 3.0), 4, np.ones(8), np.zeros(8))
    np.testing.assert_array_equal(y, 0.0)
    y, _ = nx.group_norm(np.array([[1.0, -1.0]]), 1, np.ones(2), np.zeros(2), eps=0.0)
    np.testing.assert_allclose(y, [[1.0, -1.0]])
    x = np.random.default_rng(2).normal(3.0, 2.0, size=(5, 16))
    y, _ = nx.group_norm(x, 4, eps=1e-12)
    yh = y.reshape(5, 4, 4)
    np.testing.assert_allclose(yh.mean(-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(yh.var(-1), 1.0, atol=1e-6)


def test_group_norm_bad_heads():
    with pytest.raises(ValueError):
        nx.group_norm(np.zeros((2, 6)), 4)


def test_group_norm_shift_invariance():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3, 12))
    shift = np.repeat(rng.normal(size=(3, 3)), 4, axis=1)
    a, _ = nx.group_norm(x, 3)
    b, _ = nx.group_norm(x + shift, 3)
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_linear_identity_and_block_structure():
    x = np.arange(4.0)
    np.testing.assert_array_equal(nx.linear(x, np.eye(4), np.zeros(4)), x)
    W = np.random.default_rng(4).normal(size=(2, 3, 3))
    x = np.array([0.0, 0.0, 0.0, 1.0, -2.0, 0.5])
    y = nx.linear(x, W, None, block_diag_heads=2)
    np.testing.assert_array_equal(y[:3], 0.0)
    assert np.all(y[3:] != 0.0)


def test_block_diag_param_count():
    for d, h in [(8, 2), (16, 4), (768, 4)]:
        assert nx.block_diag_param_count(d, d, h) == d * d // h + d
    with pytest.raises(ValueError):
        nx.block_diag_param_count(6, 6, 4)


def test_linear_shape_mismatch():
    with pytest.raises(ValueError):
        nx.linear(np.zeros(3), np.zeros((2, 4)))


def _fd_check(fwd, bwd, inputs, dy, tol=1e-5):
    analytic = bwd(dy)
    for name, arr in inputs.items():
        num = numerical_grad(lambda: float((fwd() * dy).sum()), arr)
        assert rel_error(analytic[name], num) < tol, name


@pytest.mark.parametrize("block", [None, 2])
def test_linear_backward_fd(block):
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 3, 4))
    W = rng.normal(size=(2, 3, 2)) if block else rng.normal(size=(5, 4))
    b = rng.normal(size=6 if block else 5)
    dy = rng.normal(size=(2, 3, b.size))

    def bwd(g):
        dx, dW, db = nx.linear_backward(x, W, g)
        return {"x": dx, "W": dW, "b": db}
    _fd_check(lambda: nx.linear(x, W, b), bwd, {"x": x, "W": W, "b": b}, dy)


def test_conv_backward_fd():
    rng = np.random.default_rng(6)
    x, k, b = rng.normal(size=(2, 7, 3)), rng.normal(size=(4, 3)), rng.normal(size=3)
    dy = rng.normal(size=(2, 7, 3))

    def bwd(g):
        dx, dk, db = nx.causal_conv1d_backward(x, k, g)
        return {"x": dx, "k": dk, "b": db}
    _fd_check(lambda: nx.causal_conv1d(x, k, b), bwd, {"x": x, "k": k, "b": b}, dy)


def test_group_norm_backward_fd():
    rng = np.random.default_rng(7)
    x, g, s = rng.normal(size=(3, 8)), rng.normal(size=8), rng.normal(size=8)
    dy = rng.normal(size=(3, 8))

    def bwd(up):
        _, cache = nx.group_norm(x, 2, g, s)
        dx, dg, ds = nx.group_norm_backward(cache, up)
        return {"x": dx, "g": dg, "s": ds}
    _fd_check(lambda: nx.group_norm(x, 2, g, s)[0], bwd, {"x": x, "g": g, "s": s}, dy)


def test_trunc_normal_bounds_and_determinism():
    a = nx.trunc_normal(nx.make_rng(9), (1000,), 0.5)
    b = nx.trunc_normal(nx.make_rng(9), (1000,), 0.5)
    np.testing.assert_array_equal(a, b)
    assert np.abs(a).max() <= 1.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=20))
def test_log_sigmoid_matches_log_of_sigmoid(xs):
    x = np.array(xs)
    np.testing.assert_allclose(nx.log_sigmoid(x), np.log(nx.sigmoid(x)), rtol=1e-9, atol=1e-15)
