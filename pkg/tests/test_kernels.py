"""Layer kernels: worked examples, naive-loop oracles and properties."""
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import gradcheck
from sonarcnn.tensor.kernels import (
    BN_EPSILON,
    ShapeError,
    backward_layer,
    conv_output_size,
    forward_layer,
    same_pads,
)


# ---------------------------------------------------------------- naive oracles

def naive_conv(x, kernel, bias, stride, padding):
    """Direct six-deep loop convolution with TF 'same' padding."""
    n, h, w, cin = x.shape
    kh, kw, _, cout = kernel.shape
    if padding == "same":
        ho, wo = -(-h // stride), -(-w // stride)
        pad_h = max((ho - 1) * stride + kh - h, 0)
        pad_w = max((wo - 1) * stride + kw - w, 0)
        top, left = pad_h // 2, pad_w // 2
    else:
        ho, wo = (h - kh) // stride + 1, (w - kw) // stride + 1
        top = left = 0
    out = np.zeros((n, ho, wo, cout))
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                for di in range(kh):
                    for dj in range(kw):
                        r, c = i * stride + di - top, j * stride + dj - left
                        if 0 <= r < h and 0 <= c < w:
                            out[b, i, j] += x[b, r, c] @ kernel[di, dj]
    return out + (0 if bias is None else bias)


def naive_depthwise(x, kernel, stride, padding):
    kh, kw, c = kernel.shape
    full = np.zeros((kh, kw, c, c))
    for ch in range(c):
        full[:, :, ch, ch] = kernel[:, :, ch]
    return naive_conv(x, full, None, stride, padding)


def naive_max_pool(x, pool, stride):
    n, h, w, c = x.shape
    ho, wo = (h - pool) // stride + 1, (w - pool) // stride + 1
    out = np.empty((n, ho, wo, c))
    for i in range(ho):
        for j in range(wo):
            out[:, i, j] = x[:, i * stride:i * stride + pool, j * stride:j * stride + pool].max(axis=(1, 2))
    return out


# ---------------------------------------------------------------- examples

def test_identity_kernel_reproduces_input():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 7, 5, 1))
    kernel = np.zeros((3, 3, 1, 1))
    kernel[1, 1, 0, 0] = 1.0
    out = forward_layer("conv2d", {"padding": "same"}, {"kernel": kernel}, x)
    np.testing.assert_array_equal(out, x)


def test_softmax_of_zeros_is_uniform():
    out = forward_layer("softmax", {}, {}, np.zeros((1, 12)))
    np.testing.assert_allclose(out, np.full((1, 12), 1 / 12), rtol=0, atol=1e-15)


def test_dense_matches_hand_computation():
    w = np.array([[1.0, -1.0], [2.0, 0.5], [0.0, 3.0]])     # (in=3, out=2)
    b = np.array([0.5, -2.0])
    x = np.array([[1.0, 2.0, 3.0]])
    # y0 = 1 + 4 + 0 + 0.5, y1 = -1 + 1 + 9 - 2
    out = forward_layer("dense", {}, {"kernel": w, "bias": b}, x)
    np.testing.assert_array_equal(out, [[5.5, 7.0]])


def test_relu_backward_dead_unit():
    (dx,), _ = backward_layer("relu", {}, {}, np.array([[-1.0]]), np.array([[1.0]]))
    assert dx[0, 0] == 0.0


def test_add_backward_passes_gradient_to_both_branches():
    rng = np.random.default_rng(1)
    a, b, g = (rng.standard_normal((2, 3, 3, 4)) for _ in range(3))
    grads, _ = backward_layer("add", {}, {}, [a, b], g)
    assert len(grads) == 2
    for dx in grads:
        np.testing.assert_array_equal(dx, g)


def test_conv_gradient_example_from_contract():
    # 1x6x6x2 input, 3 filters, float64 central differences
    result = gradcheck.run_case("conv2d_same_s1", seed=11)
    assert result.ok and result.worst_rel <= gradcheck.REL_TOL


# ---------------------------------------------------------------- oracles

@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("padding", ["same", "valid"])
@pytest.mark.parametrize("size", [(5, 5), (6, 7), (8, 8)])
def test_conv_matches_naive_loops(stride, padding, size):
    rng = np.random.default_rng(stride * 100 + size[0])
    x = rng.standard_normal((2,) + size + (3,))
    kernel = rng.standard_normal((3, 3, 3, 4))
    bias = rng.standard_normal(4)
    out = forward_layer("conv2d", {"strides": stride, "padding": padding}, {"kernel": kernel, "bias": bias}, x)
    np.testing.assert_allclose(out, naive_conv(x, kernel, bias, stride, padding), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("padding", ["same", "valid"])
def test_depthwise_matches_naive_loops(stride, padding):
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 7, 6, 3))
    kernel = rng.standard_normal((3, 3, 3))
    out = forward_layer("depthwise_conv2d", {"strides": stride, "padding": padding}, {"kernel": kernel}, x)
    np.testing.assert_allclose(out, naive_depthwise(x, kernel, stride, padding), rtol=1e-12, atol=1e-12)


def test_conv_1x1_stride2_is_subsampled_matmul():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 6, 6, 4))
    kernel = rng.standard_normal((1, 1, 4, 2))
    out = forward_layer("conv2d", {"strides": 2, "padding": "same"}, {"kernel": kernel}, x)
    np.testing.assert_allclose(out, x[:, ::2, ::2] @ kernel[0, 0], rtol=1e-12)


@pytest.mark.parametrize("pool,stride", [(2, 2), (3, 2), (3, 1)])
def test_max_pool_matches_naive(pool, stride):
    rng = np.random.default_rng(pool + stride)
    x = rng.standard_normal((2, 7, 7, 2))
    out = forward_layer("max_pool", {"pool_size": (pool, pool), "strides": stride, "padding": "valid"}, {}, x)
    np.testing.assert_array_equal(out, naive_max_pool(x, pool, stride))


def test_same_max_pool_ignores_padding():
    # all-negative input: a zero-valued pad would win the max, -inf must not
    x = -np.arange(1, 26, dtype=np.float64).reshape(1, 5, 5, 1)
    out = forward_layer("max_pool", {"pool_size": (3, 3), "strides": 2, "padding": "same"}, {}, x)
    assert out.shape == (1, 3, 3, 1)
    assert np.all(out < 0)


def test_avg_and_global_pool_values():
    x = np.arange(16, dtype=np.float64).reshape(1, 4, 4, 1)
    avg = forward_layer("avg_pool", {"pool_size": (2, 2), "strides": 2}, {}, x)
    np.testing.assert_array_equal(avg[0, :, :, 0], [[2.5, 4.5], [10.5, 12.5]])
    gap = forward_layer("global_avg_pool", {}, {}, x)
    np.testing.assert_array_equal(gap, [[7.5]])


def test_upsample_nearest():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
    out = forward_layer("upsample", {"factor": 2}, {}, x)[0, :, :, 0]
    np.testing.assert_array_equal(out, [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])


def test_batch_norm_training_normalises_each_channel():
    rng = np.random.default_rng(5)
    x = rng.normal(3.0, 2.0, (8, 4, 4, 3))
    params = {"gamma": np.ones(3), "beta": np.zeros(3), "moving_mean": np.zeros(3), "moving_variance": np.ones(3)}
    out, cache = forward_layer("batch_norm", {}, params, x, training=True, return_cache=True)
    np.testing.assert_allclose(out.mean(axis=(0, 1, 2)), 0, atol=1e-12)
    var = x.var(axis=(0, 1, 2))
    np.testing.assert_allclose(out.var(axis=(0, 1, 2)), var / (var + BN_EPSILON), rtol=1e-10)
    count = 8 * 4 * 4
    np.testing.assert_allclose(cache["batch_var"], var * count / (count - 1), rtol=1e-12)


def test_same_padding_puts_extra_cell_bottom_right():
    assert same_pads(6, 3, 2) == (0, 1)
    assert same_pads(5, 3, 1) == (1, 1)
    assert same_pads(4, 2, 1) == (0, 1)
    assert conv_output_size(7, 3, 2, "same") == 4
    assert conv_output_size(7, 3, 2, "valid") == 3


# ---------------------------------------------------------------- errors

def test_conv_channel_mismatch_names_node():
    x = np.zeros((1, 5, 5, 2))
    with pytest.raises(ShapeError, match=r"block1_conv.*3 input channels, got 2"):
        forward_layer("conv2d", {}, {"kernel": np.zeros((3, 3, 3, 4))}, x, node="block1_conv")


def test_dense_feature_mismatch():
    with pytest.raises(ShapeError, match="expects 4 features, got 3"):
        forward_layer("dense", {}, {"kernel": np.zeros((4, 2))}, np.zeros((1, 3)))


def test_pool_too_large_for_map():
    with pytest.raises(ShapeError, match="does not fit"):
        forward_layer("max_pool", {"pool_size": (2, 2)}, {}, np.zeros((1, 1, 1, 1)))


def test_add_and_concat_operand_mismatch():
    with pytest.raises(ShapeError):
        forward_layer("add", {}, {}, [np.zeros((1, 2, 2, 1)), np.zeros((1, 2, 2, 2))])
    with pytest.raises(ShapeError):
        forward_layer("concat", {}, {}, [np.zeros((1, 2, 2, 1)), np.zeros((1, 3, 2, 1))])


def test_upstream_shape_mismatch():
    with pytest.raises(ShapeError, match="upstream gradient"):
        backward_layer("relu", {}, {}, np.zeros((1, 3)), np.zeros((1, 4)))


def test_unknown_kind():
    with pytest.raises(ValueError, match="unknown layer kind"):
        forward_layer("lstm", {}, {}, np.zeros((1, 3)))


# ---------------------------------------------------------------- properties

@pytest.mark.parametrize("name", sorted(gradcheck.CASES))
def test_gradients_match_finite_differences(name):
    for seed in gradcheck.SEEDS:
        result = gradcheck.run_case(name, seed)
        assert result.ok, f"{name} seed {seed}: {result}"


@pytest.mark.parametrize("name", sorted(gradcheck.CASES))
def test_forward_is_pure(name):
    kind, make = gradcheck.CASES[name]
    attrs, params, inputs, training = make(np.random.default_rng(0))
    before = [x.copy() for x in inputs]
    params_before = {k: v.copy() for k, v in params.items()}
    a = forward_layer(kind, attrs, params, inputs, training=training)
    b = forward_layer(kind, attrs, params, inputs, training=training)
    np.testing.assert_array_equal(a, b)
    for x, x0 in zip(inputs, before):
        np.testing.assert_array_equal(x, x0)
    for k in params:
        np.testing.assert_array_equal(params[k], params_before[k])


@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 5), st.integers(1, 5), st.integers(1, 4)),
              elements=st.floats(-1e3, 1e3)))
def test_batch_norm_inference_identity(x):
    c = x.shape[-1]
    params = {"gamma": np.ones(c), "beta": np.zeros(c), "moving_mean": np.zeros(c), "moving_variance": np.ones(c)}
    out = forward_layer("batch_norm", {}, params, x, training=False)
    np.testing.assert_allclose(out, x / math.sqrt(1 + BN_EPSILON), rtol=1e-12)
    np.testing.assert_allclose(out, x, rtol=1e-3, atol=1e-9)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 20)), elements=st.floats(-50, 50)))
def test_softmax_is_a_distribution(x):
    out = forward_layer("softmax", {}, {}, x)
    assert np.all(out > 0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)


@given(st.integers(0, 2**32 - 1), st.sampled_from([(2, 2), (3, 2), (3, 3)]))
def test_max_pool_routes_each_gradient_once(seed, geometry):
    pool, stride = geometry
    rng = np.random.default_rng(seed)
    x = rng.permutation(2 * 9 * 9).astype(np.float64).reshape(2, 9, 9, 1)
    attrs = {"pool_size": (pool, pool), "strides": stride}
    out = forward_layer("max_pool", attrs, {}, x)
    # positive upstream values: a cell shared by overlapping windows cannot cancel
    g = rng.uniform(0.1, 1.0, out.shape)
    (dx,), _ = backward_layer("max_pool", attrs, {}, x, g)
    np.testing.assert_allclose(np.abs(dx).sum(), np.abs(g).sum(), rtol=1e-12)
    if stride == pool:  # non-overlapping windows: one nonzero per output
        assert np.count_nonzero(dx) == g.size


@given(st.integers(1, 3), st.integers(3, 8), st.integers(1, 3), st.integers(1, 2))
def test_conv_output_shape_follows_padding_rule(n, size, cout, stride):
    x = np.ones((n, size, size, 2))
    kernel = np.ones((3, 3, 2, cout))
    same = forward_layer("conv2d", {"strides": stride, "padding": "same"}, {"kernel": kernel}, x)
    valid = forward_layer("conv2d", {"strides": stride, "padding": "valid"}, {"kernel": kernel}, x)
    assert same.shape == (n, -(-size // stride), -(-size // stride), cout)
    assert valid.shape == (n, (size - 3) // stride + 1, (size - 3) // stride + 1, cout)
