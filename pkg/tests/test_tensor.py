import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import ndtr

from posmlp_video import tensor as T
from posmlp_video.gradcheck import check_parameters, finite_diff_check
from posmlp_video.tensor import BatchNormState, Tensor, no_grad


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def weighted(y, rng):
    # fixed random projection so the loss has no symmetric gradient cancellation
    w = Tensor(rng.standard_normal(y.shape))
    return (y * w).sum()


# ------------------------------------------------------------- matmul


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(T.matmul(a, Tensor(np.eye(2))).data, a.data)


def test_matmul_hand_example():
    out = T.matmul(Tensor([[1.0, 0.0], [0.0, 0.0]]), Tensor([[0.0, 1.0], [1.0, 0.0]]))
    assert np.array_equal(out.data, [[0.0, 1.0], [0.0, 0.0]])


@given(st.integers(1, 16), st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**32 - 1))
def test_matmul_triple_loop_oracle(m, k, n, seed):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal((m, k)), r.standard_normal((k, n))
    ref = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            ref[i, j] = s
    np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, ref, rtol=0, atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient_formulas(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
    g = rng.standard_normal((3, 2))
    (T.matmul(a, b) * Tensor(g)).sum().backward()
    np.testing.assert_allclose(a.grad, g @ b.data.T, atol=1e-12)
    np.testing.assert_allclose(b.grad, a.data.T @ g, atol=1e-12)


# ------------------------------------------------------------- hadamard


def test_hadamard_examples():
    x = Tensor([1.0, 2.0, 3.0])
    assert np.array_equal(T.hadamard(x, Tensor(np.ones(3))).data, x.data)
    assert np.array_equal(T.hadamard(x, Tensor(np.zeros(3))).data, np.zeros(3))
    assert np.array_equal(T.hadamard(x, Tensor([4.0, 5.0, 6.0])).data, [4.0, 10.0, 18.0])


def test_hadamard_shape_mismatch():
    with pytest.raises(ValueError):
        T.hadamard(Tensor(np.ones(3)), Tensor(np.ones((3, 1))))


def test_hadamard_gradients(rng):
    a, b = leaf(rng, 5), leaf(rng, 5)
    T.hadamard(a, b).sum().backward()
    assert np.array_equal(a.grad, b.data) and np.array_equal(b.grad, a.data)


# ------------------------------------------------------------- layer norm


def test_layer_norm_constant_input_is_zero():
    out = T.layer_norm(Tensor(np.full((2, 4), 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    assert np.array_equal(out.data, np.zeros((2, 4)))


def test_layer_norm_two_values():
    out = T.layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-15)
    np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-12)


@given(arrays(np.float64, (3, 6), elements=st.floats(-10, 10)))
def test_layer_norm_moments(x):
    if np.min(np.std(x, axis=-1)) < 1e-2:
        return  # degenerate rows are dominated by eps
    out = T.layer_norm(Tensor(x), Tensor(np.ones(6)), Tensor(np.zeros(6)), eps=1e-12).data
    assert np.all(np.abs(out.mean(-1)) < 1e-10)
    np.testing.assert_allclose(out.var(-1), 1.0, atol=1e-6)


def test_layer_norm_gradient(rng):
    x, gain, bias = leaf(rng, 3, 5), leaf(rng, 5), leaf(rng, 5)
    w = Tensor(rng.standard_normal((3, 5)))
    f = lambda: (T.layer_norm(x, gain, bias) * w).sum()
    for t in (x, gain, bias):
        assert finite_diff_check(f, t) < 1e-6


def test_layer_norm_zero_length_axis():
    with pytest.raises(ValueError):
        T.layer_norm(Tensor(np.zeros((2, 0))), Tensor(np.ones(0)), Tensor(np.zeros(0)))


# ------------------------------------------------------------- gelu


def test_gelu_values():
    assert T.gelu(Tensor([0.0])).data[0] == 0.0
    big = np.linspace(6, 20, 15)
    np.testing.assert_allclose(T.gelu(Tensor(big)).data, big, rtol=0, atol=1e-8)
    # independent oracle: Gaussian CDF from scipy's ndtr
    assert abs(T.gelu(Tensor([1.0])).data[0] - ndtr(1.0)) < 1e-15
    assert abs(T.gelu(Tensor([1.0])).data[0] - 0.8413447460685429) < 1e-12


def test_gelu_gradient(rng):
    # grid avoids the stationary point near -0.75 where the relative error is ill-conditioned
    x = Tensor(np.linspace(-3, 3, 13), requires_grad=True)
    assert finite_diff_check(lambda: weighted(T.gelu(x), np.random.default_rng(0)), x) < 1e-6


# ------------------------------------------------------------- linear


def test_linear_identity_and_hand_example():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert np.array_equal(T.linear(x, Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x.data)
    out = T.linear(Tensor([1.0, 1.0]), Tensor([[1.0], [1.0]]), Tensor([1.0]))
    assert np.array_equal(out.data, [3.0])


def test_linear_shape_mismatch():
    with pytest.raises(ValueError):
        T.linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))), None)


def test_linear_gradients(rng):
    x, w, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5), leaf(rng, 5)
    proj = Tensor(rng.standard_normal((2, 3, 5)))
    f = lambda: (T.linear(x, w, b) * proj).sum()
    for t in (x, w, b):
        assert finite_diff_check(f, t) < 1e-6


# ------------------------------------------------------------- conv


def test_conv_padding_rule():
    assert T.conv_padding(3, 2) == 1 and T.conv_padding(4, 4) == 0 and T.conv_padding(2, 2) == 0


def test_conv_identity_1x1(rng):
    x = Tensor(rng.standard_normal((2, 3, 5, 5, 4)))
    w = Tensor(np.eye(4).reshape(1, 1, 4, 4))
    assert np.array_equal(T.conv2d_framewise(x, w, None, 1).data, x.data)


def test_conv_all_ones_interior():
    x = Tensor(np.full((1, 1, 6, 6, 1), 2.5))
    out = T.conv2d_framewise(x, Tensor(np.ones((3, 3, 1, 1))), None, 1).data
    assert np.all(out[0, 0, 1:-1, 1:-1, 0] == 9 * 2.5)
    assert out[0, 0, 0, 0, 0] == 4 * 2.5  # zero padding at the corner


def test_conv_output_extent():
    x = Tensor(np.zeros((1, 1, 224, 224, 1)))
    assert T.conv2d_framewise(x, Tensor(np.zeros((3, 3, 1, 2))), None, 2).shape == (1, 1, 112, 112, 2)


def _conv_loop(x, w, b, stride):
    k, _, cin, cout = w.shape
    pad = T.conv_padding(k, stride)
    xp = np.pad(x, [(0, 0)] * (x.ndim - 3) + [(pad, pad), (pad, pad), (0, 0)])
    h, wd = x.shape[-3], x.shape[-2]
    ho, wo = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    out = np.zeros(x.shape[:-3] + (ho, wo, cout))
    for i in range(ho):
        for j in range(wo):
            patch = xp[..., i * stride:i * stride + k, j * stride:j * stride + k, :]
            out[..., i, j, :] = np.einsum("...abc,abcd->...d", patch, w)
    return out + (0 if b is None else b)


@pytest.mark.parametrize("k,s", [(3, 2), (3, 1), (2, 2), (4, 4)])
def test_conv_matches_loop_oracle(rng, k, s):
    x = rng.standard_normal((2, 2, 8, 8, 3))
    w = rng.standard_normal((k, k, 3, 4))
    b = rng.standard_normal(4)
    out = T.conv2d_framewise(Tensor(x), Tensor(w), Tensor(b), s).data
    np.testing.assert_allclose(out, _conv_loop(x, w, b, s), atol=1e-12)


def test_conv_gradients(rng):
    x, w, b = leaf(rng, 1, 2, 5, 5, 2), leaf(rng, 3, 3, 2, 3), leaf(rng, 3)
    proj = Tensor(rng.standard_normal((1, 2, 3, 3, 3)))
    f = lambda: (T.conv2d_framewise(x, w, b, 2) * proj).sum()
    for t in (x, w, b):
        assert finite_diff_check(f, t) < 1e-6


def test_conv_rejects_bad_kernel():
    with pytest.raises(ValueError):
        T.conv2d_framewise(Tensor(np.zeros((1, 1, 4, 4, 1))), Tensor(np.zeros((3, 3, 1, 1))), None, 0)


# ------------------------------------------------------------- batch norm


def test_batch_norm_train_zero_mean(rng):
    x = Tensor(rng.standard_normal((4, 3, 5, 5, 6)) * 3 + 7)
    st_ = BatchNormState()
    out = T.batch_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6)), st_, train=True).data
    assert np.all(np.abs(out.reshape(-1, 6).mean(0)) < 1e-10)
    assert st_.running_mean is not None


def test_batch_norm_constant_channel():
    x = Tensor(np.full((2, 3, 4), 5.0))
    out = T.batch_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)), BatchNormState(), train=True)
    assert np.array_equal(out.data, np.zeros((2, 3, 4)))


def test_batch_norm_eval_scalar_oracle():
    st_ = BatchNormState(running_mean=np.array([2.0]), running_var=np.array([4.0]))
    out = T.batch_norm(Tensor([[3.0], [0.0]]), Tensor([1.0]), Tensor([0.0]), st_, train=False, eps=1e-5)
    np.testing.assert_allclose(out.data[:, 0], [1 / np.sqrt(4 + 1e-5), -2 / np.sqrt(4 + 1e-5)], rtol=1e-15)


def test_batch_norm_running_update():
    st_ = BatchNormState(momentum=0.1)
    x = np.array([[1.0], [3.0]])
    T.batch_norm(Tensor(x), Tensor([1.0]), Tensor([0.0]), st_, train=True)
    # first call starts from mean 0, var 1; variance update is unbiased
    np.testing.assert_allclose(st_.running_mean, [0.9 * 0 + 0.1 * 2.0])
    np.testing.assert_allclose(st_.running_var, [0.9 * 1 + 0.1 * 2.0])


def test_batch_norm_eval_uninitialized():
    with pytest.raises(RuntimeError):
        T.batch_norm(Tensor(np.ones((2, 1))), Tensor([1.0]), Tensor([0.0]), BatchNormState(), train=False)


def test_batch_norm_gradients(rng):
    x, gain, bias = leaf(rng, 3, 4, 2), leaf(rng, 2), leaf(rng, 2)
    proj = Tensor(rng.standard_normal((3, 4, 2)))

    def f():
        return (T.batch_norm(x, gain, bias, BatchNormState(), train=True) * proj).sum()

    for t in (x, gain, bias):
        assert finite_diff_check(f, t) < 1e-6
    st_ = BatchNormState(running_mean=np.array([0.3, -0.2]), running_var=np.array([1.5, 0.7]))
    g = lambda: (T.batch_norm(x, gain, bias, st_, train=False) * proj).sum()
    for t in (x, gain, bias):
        assert finite_diff_check(g, t) < 1e-6


# ------------------------------------------------------------- shape ops, gather, loss


def test_split_concat_roundtrip(rng):
    x = leaf(rng, 2, 6)
    parts = T.split(x, 3, axis=-1)
    assert [p.shape for p in parts] == [(2, 2)] * 3
    assert np.array_equal(T.concat(parts, axis=-1).data, x.data)


def test_take_gradient_sums_repeats():
    table = Tensor(np.arange(5.0), requires_grad=True)
    idx = np.array([[2, 1, 0], [3, 2, 1], [4, 3, 2]])
    out = T.take(table, idx)
    assert np.array_equal(out.data, idx.astype(float))
    out.sum().backward()
    assert np.array_equal(table.grad, np.bincount(idx.ravel(), minlength=5))


def test_cross_entropy_value_and_gradient(rng):
    logits = leaf(rng, 4, 3)
    labels = np.array([0, 2, 1, 2])
    ref = -np.mean(logits.data[np.arange(4), labels] - np.log(np.exp(logits.data).sum(1)))
    assert abs(T.cross_entropy(logits, labels).item() - ref) < 1e-12
    assert finite_diff_check(lambda: T.cross_entropy(logits, labels), logits) < 1e-6


@pytest.mark.parametrize("op", ["add", "mul", "sub", "mean", "sum_axis", "transpose", "reshape", "scale"])
def test_elementary_gradients(rng, op):
    a, b = leaf(rng, 3, 4), leaf(rng, 1, 4)
    proj = np.random.default_rng(5)
    fns = {
        "add": lambda: weighted(a + b, proj),
        "mul": lambda: weighted(a * b, proj),
        "sub": lambda: weighted(a - b, proj),
        "mean": lambda: weighted(a.mean(axis=0), proj),
        "sum_axis": lambda: weighted(a.sum(axis=1, keepdims=True), proj),
        "transpose": lambda: weighted(a.transpose(1, 0), proj),
        "reshape": lambda: weighted(a.reshape(2, 6), proj),
        "scale": lambda: weighted(T.scale(a, -2.5), proj),
    }

    def f():
        proj.bit_generator.state = np.random.default_rng(5).bit_generator.state
        return fns[op]()

    for t in (a, b) if op in ("add", "mul", "sub") else (a,):
        assert finite_diff_check(f, t) < 1e-4


# ------------------------------------------------------------- tape


def test_backward_sum_and_square(rng):
    x = leaf(rng, 5)
    x.sum().backward()
    assert np.array_equal(x.grad, np.ones(5))
    x.grad = None
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data, rtol=0, atol=0)


def test_second_backward_raises(rng):
    x = leaf(rng, 3)
    loss = (x * x).sum()
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_non_scalar_backward_raises(rng):
    with pytest.raises(ValueError):
        (leaf(rng, 3) * 2.0).backward()


def test_shared_subgraph_accumulates(rng):
    x = leaf(rng, 4)
    y = x * x
    (y + y).sum().backward()
    np.testing.assert_allclose(x.grad, 4 * x.data)


def test_no_grad_records_nothing(rng):
    x = leaf(rng, 3)
    with no_grad():
        y = x * x
    assert not y.requires_grad


def test_no_grad_is_thread_local(rng):
    x = leaf(rng, 3)
    seen = []
    with no_grad():
        t = threading.Thread(target=lambda: seen.append((x * x).requires_grad))
        t.start()
        t.join()
    assert seen == [True]


def test_non_finite_output_raises():
    with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
        Tensor([1e308]) * Tensor([1e308])


@given(arrays(np.float64, (4, 6), elements=st.floats(-10, 10)))
def test_ops_stay_finite(x):
    t = Tensor(x)
    ones, zeros = Tensor(np.ones(6)), Tensor(np.zeros(6))
    outs = [T.gelu(t), T.layer_norm(t, ones, zeros), T.matmul(t, t.transpose(1, 0)),
            T.linear(t, Tensor(np.ones((6, 3))), None), T.batch_norm(t, ones, zeros, BatchNormState(), True),
            T.cross_entropy(t, np.zeros(4, dtype=int))]
    assert all(np.all(np.isfinite(o.data)) for o in outs)


def test_finite_diff_check_exact_cases(rng):
    # dyadic inputs and step: every sum is exact, so the error is exactly 0
    x = Tensor(rng.integers(-8, 8, 7).astype(float), requires_grad=True)
    assert finite_diff_check(lambda: x.sum(), x, h=2.0 ** -17) == 0.0
    x = leaf(rng, 7)
    assert finite_diff_check(lambda: x.sum(), x) < 1e-9
    assert finite_diff_check(lambda: (x * x).sum(), x, h=1e-5) < 1e-8


def test_finite_diff_check_rejects_bad_step(rng):
    x = leaf(rng, 2)
    with pytest.raises(ValueError):
        finite_diff_check(lambda: x.sum(), x, h=0.0)


def test_check_parameters_samples_entries(rng):
    params = {"a": leaf(rng, 30), "b": leaf(rng, 2)}
    errs = check_parameters(lambda: (params["a"] * params["a"]).sum() + params["b"].sum(), params, max_entries=5)
    assert set(errs) == {"a", "b"} and max(errs.values()) < 1e-8
