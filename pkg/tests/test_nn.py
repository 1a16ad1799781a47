import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from refed.nn import AdamW, Parameter, ParameterSet, grad_check, softmax_xent
from refed.nn import functional as F
from refed.nn import kernels
from refed.nn.layers import BatchNorm1d, Conv1d, Dropout, Linear, glorot_uniform


def conv_loops(x, w, b):
    """Direct O(B*C_out*C_in*T*k) zero-padded cross-correlation."""
    B, ci, T = x.shape
    co, _, k = w.shape
    pad = k // 2
    y = np.zeros((B, co, T))
    for n in range(B):
        for o in range(co):
            for t in range(T):
                acc = b[o]
                for c in range(ci):
                    for j in range(k):
                        s = t + j - pad
                        if 0 <= s < T:
                            acc += w[o, c, j] * x[n, c, s]
                y[n, o, t] = acc
    return y


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((2, 1, 9))
    w = np.zeros((1, 1, 5))
    w[0, 0, 2] = 1.0
    np.testing.assert_array_equal(F.conv1d(x, w, np.zeros(1)), x)


def test_conv_zero_input_gives_bias():
    b = np.array([0.5, -2.0, 3.0])
    y = F.conv1d(np.zeros((2, 4, 7)), np.ones((3, 4, 5)), b)
    assert np.all(y == b[None, :, None])


def test_conv_matches_loop_reference_small(rng):
    x = rng.standard_normal((1, 2, 6))
    w = rng.standard_normal((3, 2, 3))
    b = rng.standard_normal(3)
    np.testing.assert_allclose(F.conv1d(x, w, b), conv_loops(x, w, b), atol=1e-12)


@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(1, 9), st.sampled_from([1, 3, 5]),
       st.integers(0, 2**31 - 1))
def test_conv_matches_loop_reference(B, ci, co, T, k, seed):
    r = np.random.default_rng(seed)
    x, w, b = r.standard_normal((B, ci, T)), r.standard_normal((co, ci, k)), r.standard_normal(co)
    np.testing.assert_allclose(F.conv1d(x, w, b), conv_loops(x, w, b), atol=1e-6)


def test_conv_shape_mismatch():
    with pytest.raises(ValueError):
        F.conv1d(np.zeros((1, 2, 5)), np.zeros((3, 4, 5)), np.zeros(3))
    with pytest.raises(ValueError):
        Conv1d("c", 2, 3, 5, np.random.default_rng(0)).forward(np.zeros((1, 5, 4), np.float32))


def test_batchnorm_train_normalizes(rng):
    x = rng.standard_normal((4, 3, 5)) * 3 + 7
    rm, rv = np.zeros(3), np.ones(3)
    y, _ = F.batchnorm1d(x, np.ones(3), np.zeros(3), True, rm, rv, eps=0.0)
    np.testing.assert_allclose(y.mean(axis=(0, 2)), 0, atol=1e-6)
    np.testing.assert_allclose(y.var(axis=(0, 2)), 1, atol=1e-6)
    # running statistics move 10% of the way towards the batch statistics
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2)))


def test_batchnorm_eval_identity(rng):
    x = rng.standard_normal((2, 3, 4))
    y, _ = F.batchnorm1d(x, np.ones(3), np.zeros(3), False, np.zeros(3), np.ones(3))
    np.testing.assert_allclose(y, x / math.sqrt(1 + 1e-5))


def test_batchnorm_eval_is_deterministic(rng):
    bn = BatchNorm1d("bn", 3, dtype=np.float64)
    bn.running_mean[:] = rng.standard_normal(3)
    bn.running_var[:] = rng.uniform(0.5, 2, 3)
    bn.eval()
    x = rng.standard_normal((5, 4, 3))
    np.testing.assert_array_equal(bn.forward(x), bn.forward(x))


def test_batchnorm_single_value_rejected():
    with pytest.raises(ValueError):
        BatchNorm1d("bn", 2).forward(np.zeros((1, 1, 2), np.float32))


def test_relu_values():
    np.testing.assert_array_equal(F.relu(np.array([-3.0, 3.0])), [0.0, 3.0])


def test_dropout_rate_zero_is_identity(rng):
    x = rng.standard_normal((3, 4))
    for training in (True, False):
        y, _ = F.dropout(x, 0.0, rng, training)
        assert y is x
    d = Dropout(0.0, rng)
    assert d.forward(x) is x


def test_dropout_inverted_scaling(rng):
    x = np.ones((200, 50))
    y, mask = F.dropout(x, 0.5, rng, True)
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.05
    y_eval, _ = F.dropout(x, 0.5, rng, False)
    assert y_eval is x


def test_dropout_frozen_mask_reused(rng):
    d = Dropout(0.5, np.random.default_rng(3))
    x = np.ones((4, 6), np.float32)
    a = d.forward(x)
    d.freeze()
    np.testing.assert_array_equal(d.forward(x), a)


def test_dropout_rate_validation():
    with pytest.raises(ValueError):
        Dropout(1.0, np.random.default_rng(0))


def test_linear_identity(rng):
    x = rng.standard_normal((4, 3))
    np.testing.assert_array_equal(F.linear(x, np.eye(3), np.zeros(3)), x)


def test_linear_layer_backward_shapes(rng):
    lin = Linear("l", 5, 2, rng, dtype=np.float64)
    x = rng.standard_normal((3, 5))
    lin.forward(x)
    dx = lin.backward(np.ones((3, 2)))
    assert dx.shape == (3, 5)
    np.testing.assert_allclose(lin.bias.grad, [3.0, 3.0])


def test_flatten_is_time_major():
    x = np.arange(2 * 3 * 4).reshape(2, 3, 4)  # [B, T, C]
    flat = F.flatten(x)
    assert flat[1, 1 * 4 + 2] == x[1, 1, 2]


def test_softmax_xent_uniform_and_saturated():
    loss, _ = softmax_xent(np.zeros((3, 4)), [0, 1, 3])
    assert abs(loss - math.log(4)) < 1e-12
    logits = np.zeros((1, 3))
    logits[0, 1] = 1000.0
    assert softmax_xent(logits, [1])[0] <= 1e-6


def test_softmax_xent_worked_value():
    # -log(e^3 / (e + e^2 + e^3))
    expected = -3 + math.log(math.exp(1) + math.exp(2) + math.exp(3))
    loss, grad = softmax_xent(np.array([[1.0, 2.0, 3.0]]), [2])
    assert abs(loss - 0.407606) < 1e-6
    assert abs(loss - expected) < 1e-12
    np.testing.assert_allclose(grad.sum(), 0.0, atol=1e-15)


@given(st.integers(1, 6), st.integers(2, 7), st.integers(0, 2**31 - 1))
def test_softmax_xent_nonnegative(B, M, seed):
    r = np.random.default_rng(seed)
    loss, _ = softmax_xent(r.standard_normal((B, M)) * 10, r.integers(0, M, B))
    assert loss >= 0


def test_softmax_xent_errors():
    with pytest.raises(ValueError):
        softmax_xent(np.zeros((0, 3)), [])
    with pytest.raises(ValueError):
        softmax_xent(np.zeros((2, 3)), [0, 3])


def test_glorot_bounds():
    w = glorot_uniform(np.random.default_rng(0), (64, 4, 5), 20, 320, np.float32)
    limit = math.sqrt(6 / (20 + 320))
    assert np.abs(w).max() <= limit
    assert np.abs(w).max() > 0.9 * limit


def test_parameter_set_rejects_duplicates():
    ps = ParameterSet([Parameter("a", np.zeros(2))])
    with pytest.raises(ValueError):
        ps.add(Parameter("a", np.zeros(1)))
    assert ps.count() == 2


def test_adamw_zero_grad_no_decay_is_noop():
    p = Parameter("p", np.array([1.5, -2.0]))
    opt = AdamW([p], lr=0.1, weight_decay=0.0)
    opt.step()
    np.testing.assert_array_equal(p.value, [1.5, -2.0])


def test_adamw_first_step():
    p = Parameter("p", np.array([1.0]))
    p.grad[:] = 1.0
    AdamW([p], lr=1e-4, weight_decay=0.0).step()
    assert abs(p.value[0] - (1 - 1e-4)) < 1e-10


def test_adamw_three_step_quadratic_trajectory():
    # f(p) = (p - 3)^2, gradient taken before the step as a training loop would
    p = Parameter("p", np.array([0.5]))
    opt = AdamW([p], lr=0.1, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01)
    got = []
    for _ in range(3):
        p.grad[:] = 2 * (p.value - 3)
        opt.step()
        got.append(float(p.value[0]))
    p0, m, v, ref = 0.5, 0.0, 0.0, []
    for t in range(1, 4):
        g = 2 * (p0 - 3)
        p0 = p0 * (1 - 0.1 * 0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        p0 = p0 - 0.1 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
        ref.append(p0)
    np.testing.assert_allclose(got, ref, rtol=0, atol=1e-12)


def test_adamw_reset_clears_moments():
    p = Parameter("p", np.ones(3))
    opt = AdamW([p])
    p.grad[:] = 1.0
    opt.step()
    opt.reset()
    assert opt.step_count == 0 and not np.any(opt.m[0]) and not np.any(opt.v[0])


def test_grad_check_exact_for_affine():
    a = np.array([1.5, -2.0, 0.25])
    p = Parameter("p", np.array([0.3, 0.1, -0.7]))

    def loss_and_grad():
        p.grad += a
        return float(a @ p.value + 4.0)

    # central differences are exact for affine maps at any step; a wide step keeps rounding out
    assert grad_check(loss_and_grad, [p], eps=1e-2).worst <= 1e-10


def test_grad_check_flags_corrupted_conv_backward(rng):
    x = Parameter("x", rng.standard_normal((2, 2, 6)))
    w = Parameter("w", rng.standard_normal((3, 2, 5)))
    b = Parameter("b", rng.standard_normal(3))
    R = rng.standard_normal((2, 3, 6))

    def loss_and_grad():
        dx, dw, db = F.conv1d_backward(x.value, w.value, R)
        x.grad += dx
        w.grad += 2 * dw  # deliberately wrong
        b.grad += db
        return float((F.conv1d(x.value, w.value, b.value) * R).sum())

    report = grad_check(loss_and_grad, [x, w, b])
    assert report.max_rel_err["w"] > 0.3
    assert report.max_rel_err["x"] < 1e-6
    assert not report.passed


def test_grad_check_kink_retry_does_not_hide_bugs():
    p = Parameter("p", np.array([3e-7]))

    def abs_loss():
        p.grad += np.sign(p.value)
        return float(abs(p.value[0]))

    # the +-eps interval straddles the kink at 0; a smaller step resolves it
    report = grad_check(abs_loss, [p], eps=1e-6)
    assert report.passed and report.kink_retries >= 1

    def wrong_smooth():
        p.grad += 3 * p.value**2 * 2
        return float(p.value[0] ** 3)

    p.value[:] = 0.7
    assert grad_check(wrong_smooth, [p]).worst > 0.3


def test_grad_check_rejects_nonfinite():
    p = Parameter("p", np.array([1.0]))
    with pytest.raises(FloatingPointError):
        grad_check(lambda: float("nan"), [p])


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_compiled_and_python_backends_agree(dtype, rng):
    if "compiled" not in kernels.available_backends():
        pytest.skip("compiled kernels not built")
    x = rng.standard_normal((3, 7, 5)).astype(dtype)
    x2 = rng.standard_normal((40, 6)).astype(dtype)
    gamma, beta = rng.uniform(0.5, 1.5, 6).astype(dtype), rng.standard_normal(6).astype(dtype)
    dy = rng.standard_normal((40, 6)).astype(dtype)
    results = {}
    try:
        for name in ("python", "compiled"):
            kernels.set_backend(name)
            cols = kernels.im2col(x, 5)
            back = kernels.col2im(cols, 5, 5)
            y, xhat, mean, var, invstd = kernels.bn_train_forward(x2, gamma, beta, 1e-5)
            dx, dg, db = kernels.bn_backward(dy, xhat, gamma, invstd)
            results[name] = [cols, back, y, xhat, mean, var, invstd, dx, dg, db]
    finally:
        kernels.set_backend("compiled")
    for a, b in zip(results["python"], results["compiled"]):
        assert a.dtype == b.dtype
        np.testing.assert_allclose(a, b, rtol=1e-6 if dtype == np.float32 else 1e-12, atol=1e-6)


def test_kernels_accept_read_only_input(rng):
    x = rng.standard_normal((2, 5, 3)).astype(np.float32)
    x.flags.writeable = False
    assert kernels.im2col(x, 3).shape == (2, 5, 9)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.set_backend("gpu")
