import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ganinpaint.autodiff import (
    GRAD_CHECK_CASES,
    Adam,
    AdamState,
    NonDeterministicError,
    NonFiniteError,
    ShapeError,
    Tensor,
    adam_step,
    check_op,
    forward_op,
    grad_check,
)
from ganinpaint.autodiff import ops
from ganinpaint.autodiff.tensor import topological_order


def test_relu_example():
    assert np.array_equal(ops.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])


def test_tanh_of_zero():
    assert np.array_equal(ops.tanh(Tensor(np.zeros((2, 3)))).data, np.zeros((2, 3)))


def test_conv2d_averaging_kernel_matches_window_loop(rng):
    x = rng.normal(size=(1, 1, 5, 5))
    w = np.full((1, 1, 3, 3), 1.0 / 9.0)
    out = ops.conv2d(Tensor(x), Tensor(w)).data
    assert out.shape == (1, 1, 3, 3)
    for i in range(3):
        for j in range(3):
            assert out[0, 0, i, j] == pytest.approx(x[0, 0, i:i + 3, j:j + 3].mean(), abs=1e-14)


def test_conv2d_stride_padding_loop_oracle(rng):
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    out = ops.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 4, 3))
    for i in range(4):
        for j in range(3):
            patch = xp[:, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
            ref[:, :, i, j] = np.einsum("nchw,ochw->no", patch, w)
    np.testing.assert_allclose(out, ref, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    st.integers(1, 2), st.integers(1, 3), st.integers(1, 3), st.integers(3, 8),
    st.sampled_from([1, 2]), st.integers(0, 1), st.sampled_from([1, 3, 4]), st.integers(0, 10**6),
)
def test_conv_transpose_is_adjoint_of_conv(n, c, o, size, stride, padding, k, seed):
    # compatible shapes: the strided windows tile the padded input exactly
    if size + 2 * padding < k or (size + 2 * padding - k) % stride:
        return
    r = np.random.default_rng(seed)
    x = r.normal(size=(n, c, size, size))
    w = r.normal(size=(o, c, k, k))
    y_shape = ops.conv2d(Tensor(x), Tensor(w), stride, padding).shape
    y = r.normal(size=y_shape)
    lhs = np.sum(ops.conv2d(Tensor(x), Tensor(w), stride, padding).data * y)
    back = ops.conv_transpose2d(Tensor(y), Tensor(w), stride, padding).data
    assert back.shape == x.shape
    rhs = np.sum(x * back)
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="conv2d"):
        ops.conv2d(Tensor(np.ones((1, 2, 5, 5))), Tensor(np.ones((1, 3, 3, 3))))


def test_log_of_non_positive_rejected():
    with pytest.raises(ValueError, match="log"):
        ops.log(Tensor([1.0, 0.0]))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_forward_is_reported():
    with pytest.raises(NonFiniteError):
        ops.mul_const(Tensor([1e308]), 10.0)


def test_forward_op_dispatch():
    a = Tensor(np.arange(4.0).reshape(2, 2))
    assert np.array_equal(forward_op("elementwise_mul_const", a, c=3.0).data, 3 * a.data)
    assert np.array_equal(forward_op("leaky_relu", Tensor([-1.0, 1.0]), alpha=0.1).data, [-0.1, 1.0])
    with pytest.raises(ValueError, match="unknown op"):
        forward_op("softmax", a)


def test_backward_linear_and_quadratic():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    ops.sum(ops.mul_const(x, 2.0)).backward()
    assert np.array_equal(x.grad, np.full((2, 3), 2.0))
    x = Tensor([3.0, -1.0], requires_grad=True)
    ops.sum(ops.mul(x, x)).backward()
    assert np.array_equal(x.grad, [6.0, -2.0])


def test_fan_out_sums_and_repeated_backward_accumulates():
    x = Tensor(np.ones(4), requires_grad=True)
    loss = ops.add(ops.sum(x), ops.sum(x))
    loss.backward()
    assert np.array_equal(x.grad, np.full(4, 2.0))
    loss.backward()
    assert np.array_equal(x.grad, np.full(4, 4.0))
    x.zero_grad()
    assert x.grad is None


def test_non_scalar_backward_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ops.mul_const(x, 2.0).backward()


def test_topological_order_puts_inputs_first():
    x = Tensor(np.ones(3), requires_grad=True)
    a = ops.tanh(x)
    b = ops.mul(a, x)
    loss = ops.sum(ops.add(a, b))
    order = topological_order(loss)
    pos = {id(t): i for i, t in enumerate(order)}
    for node in order:
        for parent in node._parents:
            assert pos[id(parent)] < pos[id(node)]
    assert order[-1] is loss


def test_two_layer_tanh_network_matches_finite_differences(rng):
    w1 = rng.normal(size=(5, 4))
    w2 = rng.normal(size=(4, 1))
    x = rng.normal(size=(3, 5))

    def builder(w):
        return ops.sum(ops.matmul(ops.tanh(ops.matmul(Tensor(x), w)), Tensor(w2)))

    assert grad_check(builder, w1, 1e-5) < 1e-6


def test_grad_check_identity_sum_is_exact():
    assert grad_check(lambda t: ops.sum(t), np.arange(6.0).reshape(2, 3)) < 1e-9


def test_grad_check_rejects_non_deterministic_builder():
    r = np.random.default_rng(0)
    with pytest.raises(NonDeterministicError):
        grad_check(lambda t: ops.sum(ops.mul_const(t, r.normal())), np.ones(3))
    with pytest.raises(ValueError):
        grad_check(lambda t: ops.sum(t), np.ones(3), eps=0.0)


@pytest.mark.parametrize("name", sorted(GRAD_CHECK_CASES))
def test_every_op_passes_grad_check(name):
    assert check_op(name, np.random.default_rng(7), points=20) < 1e-4


def test_forward_is_pure(rng):
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(4, 3, 3, 3))
    a = ops.conv2d(Tensor(x), Tensor(w), 2, 1).data
    b = ops.conv2d(Tensor(x), Tensor(w), 2, 1).data
    assert a.tobytes() == b.tobytes()


def test_batchnorm_running_statistics_momentum(rng):
    x = rng.normal(2.0, 3.0, size=(8, 2, 4, 4))
    running = {"mean": np.zeros(2), "var": np.ones(2)}
    ops.batchnorm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), True, running)
    np.testing.assert_allclose(running["mean"], 0.1 * x.mean(axis=(0, 2, 3)), atol=1e-14)
    np.testing.assert_allclose(running["var"], 0.9 + 0.1 * x.var(axis=(0, 2, 3)), atol=1e-14)
    y = ops.batchnorm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), False, running).data
    ref = (x - running["mean"][None, :, None, None]) / np.sqrt(running["var"][None, :, None, None] + 1e-5)
    np.testing.assert_allclose(y, ref, atol=1e-12)


# ---------------------------------------------------------------- Adam


def test_adam_zero_gradient_leaves_params():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    adam_step(params, {"w": np.zeros(2)}, state, 0.1, 0.9, 0.999)
    assert np.array_equal(params["w"], [1.0, -2.0])
    assert state.t == 1


@given(st.floats(-100, 100).filter(lambda g: abs(g) > 1e-3), st.floats(1e-4, 1.0))
def test_adam_first_step_moves_by_lr_against_sign(g, lr):
    params = {"w": np.array([0.5])}
    adam_step(params, {"w": np.array([g])}, AdamState(), lr, 0.9, 0.999, eps=1e-8)
    assert params["w"][0] - 0.5 == pytest.approx(-lr * np.sign(g), rel=1e-4)


def test_adam_quadratic_trajectory_decreases():
    opt = Adam(lr=0.1)
    params = {"w": np.array([1.0])}
    mags = [1.0]
    for _ in range(10):
        opt.step(params, {"w": 2 * params["w"]})
        mags.append(abs(params["w"][0]))
    assert all(b < a for a, b in zip(mags, mags[1:]))
    # reference scalar simulation
    w, m, v = 1.0, 0.0, 0.0
    for t in range(1, 11):
        g = 2 * w
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert params["w"][0] == pytest.approx(w, abs=1e-14)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(3)}, {"w": np.zeros(2)}, AdamState(), 0.1, 0.9, 0.999)
