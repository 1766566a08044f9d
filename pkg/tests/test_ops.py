import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfsim import ops
from selfsim.ops import ConvLayerParams

from conftest import numerical_gradient, relative_error


def reference_conv2d(x, params):
    """Six-nested-loop convolution with replicate padding, the oracle."""
    out_c, in_c, kh, kw = params.weights.shape
    _, h, w = x.shape
    out = np.zeros((out_c, h, w))
    for o in range(out_c):
        for y in range(h):
            for xx in range(w):
                acc = params.bias[o]
                for c in range(in_c):
                    for ky in range(kh):
                        for kx in range(kw):
                            sy = min(max(y + ky - kh // 2, 0), h - 1)
                            sx = min(max(xx + kx - kw // 2, 0), w - 1)
                            acc += params.weights[o, c, ky, kx] * x[c, sy, sx]
                out[o, y, xx] = acc
    return out


class TestConv2d:
    def test_identity_1x1(self, rng):
        x = rng.standard_normal((3, 6, 7))
        p = ConvLayerParams(np.eye(3).reshape(3, 3, 1, 1), np.zeros(3))
        np.testing.assert_allclose(ops.conv2d(x, p), x)

    def test_zero_input_gives_bias(self, rng):
        bias = rng.standard_normal(4)
        p = ConvLayerParams(rng.standard_normal((4, 2, 3, 3)), bias)
        out = ops.conv2d(np.zeros((2, 5, 5)), p)
        np.testing.assert_allclose(out, np.broadcast_to(bias[:, None, None], (4, 5, 5)))

    def test_matches_loop_nest_oracle(self, rng):
        x = rng.standard_normal((3, 8, 8))
        p = ConvLayerParams(rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4))
        fast = ops.conv2d(x, p)
        slow = reference_conv2d(x, p)
        assert relative_error(fast, slow) <= 1e-6

    def test_channel_mismatch_raises(self, rng):
        p = ConvLayerParams(rng.standard_normal((4, 3, 3, 3)), np.zeros(4))
        with pytest.raises(ValueError, match="channels"):
            ops.conv2d(rng.standard_normal((2, 5, 5)), p)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            ConvLayerParams(np.zeros((1, 1, 2, 2)), np.zeros(1))


class TestConv2dBackward:
    def test_zero_grad_out(self, rng):
        x = rng.standard_normal((2, 5, 5))
        p = ConvLayerParams(rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3))
        gx, gp = ops.conv2d_backward(x, p, np.zeros((3, 5, 5)))
        assert not gx.any() and not gp.weights.any() and not gp.bias.any()

    def test_identity_kernel_passes_grad(self, rng):
        x = rng.standard_normal((3, 5, 6))
        p = ConvLayerParams(np.eye(3).reshape(3, 3, 1, 1), np.zeros(3))
        g = rng.standard_normal((3, 5, 6))
        gx, _ = ops.conv2d_backward(x, p, g)
        np.testing.assert_allclose(gx, g)

    def test_finite_differences(self, rng):
        x = rng.standard_normal((2, 6, 6))
        p = ConvLayerParams(rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3))
        probe = rng.standard_normal((3, 6, 6))

        def loss():
            return float((ops.conv2d(x, p) * probe).sum())

        gx, gp = ops.conv2d_backward(x, p, probe)
        assert relative_error(gx, numerical_gradient(loss, x)) <= 1e-7
        assert relative_error(gp.weights, numerical_gradient(loss, p.weights)) <= 1e-7
        assert relative_error(gp.bias, numerical_gradient(loss, p.bias)) <= 1e-7

    def test_shape_mismatch_raises(self, rng):
        x = rng.standard_normal((2, 5, 5))
        p = ConvLayerParams(rng.standard_normal((3, 2, 3, 3)), np.zeros(3))
        with pytest.raises(ValueError):
            ops.conv2d_backward(x, p, np.zeros((3, 4, 5)))


class TestRelu:
    def test_all_negative(self):
        assert not ops.relu(-np.ones((2, 3, 3))).any()

    def test_all_positive_identity(self, rng):
        x = np.abs(rng.standard_normal((2, 3, 3))) + 0.1
        np.testing.assert_array_equal(ops.relu(x), x)

    def test_finite_differences_away_from_kinks(self, rng):
        x = rng.standard_normal((2, 5, 5))
        x[np.abs(x) < 1e-3] = 0.5  # keep clear of the kink
        probe = rng.standard_normal(x.shape)

        def loss():
            return float((ops.relu(x) * probe).sum())

        g = ops.relu_backward(x, probe)
        assert relative_error(g, numerical_gradient(loss, x)) <= 1e-7


class TestBilinearResample:
    def test_same_size_identity(self, rng):
        x = rng.standard_normal((3, 5, 7))
        np.testing.assert_array_equal(ops.bilinear_resample(x, 5, 7), x)

    def test_constant_stays_constant(self):
        x = np.full((2, 3, 4), 2.5)
        out = ops.bilinear_resample(x, 9, 5)
        np.testing.assert_allclose(out, 2.5)

    def test_2x2_to_3x3_center(self):
        x = np.array([[[0.0, 1.0], [2.0, 3.0]]])
        out = ops.bilinear_resample(x, 3, 3)
        # center samples (0.5, 0.5): mean of the four corners
        assert out[0, 1, 1] == pytest.approx(1.5)
        np.testing.assert_allclose(out[0, 0], [0.0, 0.5, 1.0])

    def test_adjoint_inner_product_identity(self, rng):
        x = rng.standard_normal((2, 5, 6))
        y = rng.standard_normal((2, 11, 8))
        lhs = (ops.bilinear_resample(x, 11, 8) * y).sum()
        rhs = (x * ops.bilinear_resample_backward(y, 5, 6)).sum()
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_degenerate_one_pixel_axis(self, rng):
        x = rng.standard_normal((1, 1, 4))
        out = ops.bilinear_resample(x, 3, 4)
        for row in range(3):
            np.testing.assert_allclose(out[0, row], x[0, 0])

    def test_bad_size_raises(self, rng):
        with pytest.raises(ValueError):
            ops.bilinear_resample(rng.standard_normal((1, 3, 3)), 0, 3)


class TestSpatialGradient:
    def test_constant_is_zero(self):
        gx, gy = ops.spatial_gradient(np.full((2, 4, 5), 3.0))
        assert not gx.any() and not gy.any()

    def test_linear_ramp(self):
        x = np.tile(np.arange(6.0), (1, 5, 1))
        gx, gy = ops.spatial_gradient(x)
        np.testing.assert_allclose(gx, 1.0)
        np.testing.assert_allclose(gy, 0.0)

    def test_interior_matches_definition(self, rng):
        x = rng.standard_normal((2, 6, 7))
        gx, gy = ops.spatial_gradient(x)
        for y in range(1, 5):
            for xx in range(1, 6):
                assert gx[0, y, xx] == pytest.approx(
                    (x[0, y, xx + 1] - x[0, y, xx - 1]) / 2
                )
                assert gy[0, y, xx] == pytest.approx(
                    (x[0, y + 1, xx] - x[0, y - 1, xx]) / 2
                )

    def test_one_pixel_axis_zero_component(self, rng):
        x = rng.standard_normal((2, 1, 5))
        gx, gy = ops.spatial_gradient(x)
        assert not gy.any()
        assert gx.any()


class TestChannelwiseNormalize:
    def test_unit_vectors_unchanged(self, rng):
        x = rng.standard_normal((4, 5, 5))
        x /= np.linalg.norm(x, axis=0, keepdims=True)
        out = ops.channelwise_l2_normalize(x)
        np.testing.assert_allclose(out, x, atol=1e-6)

    def test_zero_tensor_no_nan(self):
        out = ops.channelwise_l2_normalize(np.zeros((3, 4, 4)))
        assert np.isfinite(out).all()
        assert not out.any()

    def test_norms_in_range(self, rng):
        x = rng.standard_normal((4, 6, 6)) + 0.5
        out = ops.channelwise_l2_normalize(x)
        norms = np.linalg.norm(out, axis=0)
        pre = np.linalg.norm(x, axis=0)
        assert (norms <= 1.0 + 1e-12).all()
        assert (norms[pre >= 0.1] >= 1.0 - 1e-3).all()

    def test_finite_differences(self, rng):
        x = rng.standard_normal((3, 4, 4))
        probe = rng.standard_normal(x.shape)

        def loss():
            return float((ops.channelwise_l2_normalize(x) * probe).sum())

        g = ops.channelwise_l2_normalize_backward(x, probe)
        assert relative_error(g, numerical_gradient(loss, x)) <= 1e-7


class TestAvgPool:
    def test_even_shapes(self):
        x = np.arange(16.0).reshape(1, 4, 4)
        out = ops.avgpool2(x)
        assert out.shape == (1, 2, 2)
        assert out[0, 0, 0] == pytest.approx((0 + 1 + 4 + 5) / 4)

    def test_odd_shapes_ceil(self, rng):
        out = ops.avgpool2(rng.standard_normal((2, 5, 7)))
        assert out.shape == (2, 3, 4)

    def test_adjoint_inner_product_identity(self, rng):
        x = rng.standard_normal((2, 5, 7))
        y = rng.standard_normal((2, 3, 4))
        lhs = (ops.avgpool2(x) * y).sum()
        rhs = (x * ops.avgpool2_backward(y, 5, 7)).sum()
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestBilinearSampleAt:
    def test_integer_coordinates_gather(self, rng):
        x = rng.standard_normal((2, 5, 6))
        ys = np.array([0.0, 2.0, 4.0])
        xs = np.array([1.0, 3.0, 5.0])
        out = ops.bilinear_sample_at(x, ys, xs)
        np.testing.assert_allclose(out, x[:, [0, 2, 4], [1, 3, 5]])

    def test_halfway_average(self):
        x = np.arange(4.0).reshape(1, 2, 2)
        out = ops.bilinear_sample_at(x, np.array([0.5]), np.array([0.5]))
        assert out[0, 0] == pytest.approx(1.5)

    def test_out_of_range_clamps(self, rng):
        x = rng.standard_normal((1, 3, 3))
        out = ops.bilinear_sample_at(x, np.array([-5.0]), np.array([10.0]))
        assert out[0, 0] == pytest.approx(x[0, 0, 2])


def test_single_precision_path(rng):
    """Kernels preserve float32 and stay within single-precision accuracy
    of the double-precision result."""
    x64 = rng.standard_normal((3, 10, 10))
    p64 = ConvLayerParams(rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4))
    x32 = x64.astype(np.float32)
    p32 = ConvLayerParams(
        p64.weights.astype(np.float32), p64.bias.astype(np.float32)
    )
    out32 = ops.conv2d(x32, p32)
    assert out32.dtype == np.float32
    assert relative_error(out32, ops.conv2d(x64, p64)) <= 1e-4
    norm32 = ops.channelwise_l2_normalize(x32)
    assert norm32.dtype == np.float32
    assert relative_error(norm32, ops.channelwise_l2_normalize(x64)) <= 1e-4
    res32 = ops.bilinear_resample(x32, 7, 13)
    assert res32.dtype == np.float32
    assert relative_error(res32, ops.bilinear_resample(x64, 7, 13)) <= 1e-4


@settings(max_examples=25, deadline=None)
@given(
    c=st.integers(1, 3),
    h=st.integers(2, 7),
    w=st.integers(2, 7),
    seed=st.integers(0, 10_000),
)
def test_property_normalize_norm_bounded(c, h, w, seed):
    x = np.random.default_rng(seed).standard_normal((c, h, w)) * 3.0
    norms = np.linalg.norm(ops.channelwise_l2_normalize(x), axis=0)
    assert (norms <= 1.0 + 1e-12).all()


@settings(max_examples=25, deadline=None)
@given(
    h=st.integers(2, 6),
    w=st.integers(2, 6),
    oh=st.integers(1, 9),
    ow=st.integers(1, 9),
    seed=st.integers(0, 10_000),
)
def test_property_resample_preserves_value_range(h, w, oh, ow, seed):
    x = np.random.default_rng(seed).uniform(-2.0, 5.0, size=(2, h, w))
    out = ops.bilinear_resample(x, oh, ow)
    assert out.min() >= x.min() - 1e-9
    assert out.max() <= x.max() + 1e-9
    # round trip back to the input size is the identity composition check
    back = ops.bilinear_resample(out, h, w)
    assert back.shape == x.shape
