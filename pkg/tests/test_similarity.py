import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfsim import ops, similarity
from selfsim.model import SHIFT_BILINEAR, SHIFT_NEAREST
from selfsim.ops import ConvLayerParams

from conftest import numerical_gradient, relative_error


class TestShiftTransform:
    def test_zero_offset_identity(self, rng):
        act = rng.standard_normal((3, 6, 7))
        for mode in (SHIFT_BILINEAR, SHIFT_NEAREST):
            np.testing.assert_allclose(similarity.shift_transform(act, (0.0, 0.0), mode), act)

    def test_integer_offset_exact_shift(self, rng):
        act = rng.standard_normal((2, 5, 6))
        out = similarity.shift_transform(act, (1.0, 0.0))
        # out(y, x) = act(y, x - 1); the first column replicates the border
        np.testing.assert_allclose(out[:, :, 1:], act[:, :, :-1])
        np.testing.assert_allclose(out[:, :, 0], act[:, :, 0])

    def test_half_pixel_on_ramp(self):
        act = np.tile(np.arange(8.0), (1, 6, 1))
        out = similarity.shift_transform(act, (0.5, 0.0))
        # interior: x - 0.5
        np.testing.assert_allclose(out[0, :, 1:], act[0, :, 1:] - 0.5)

    def test_modes_agree_at_integer_offsets(self, rng):
        act = rng.standard_normal((2, 7, 7))
        for off in ((2.0, -1.0), (-3.0, 0.0)):
            a = similarity.shift_transform(act, off, SHIFT_BILINEAR)
            b = similarity.shift_transform(act, off, SHIFT_NEAREST)
            np.testing.assert_allclose(a, b)

    def test_unknown_mode_rejected(self, rng):
        with pytest.raises(ValueError, match="shift mode"):
            similarity.shift_transform(rng.standard_normal((1, 3, 3)), (0, 0), "nearest")


class TestSelfDissimilarity:
    def test_equal_streams_zero(self, rng):
        act = rng.standard_normal((3, 6, 6))
        offs = rng.uniform(-2, 2, (5, 2))
        out = similarity.self_dissimilarity(act, offs, offs.copy())
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_constant_activation_zero(self, rng):
        act = np.full((3, 6, 6), 1.7)
        offs = rng.uniform(-2, 2, (4, 2))
        offt = rng.uniform(-2, 2, (4, 2))
        out = similarity.self_dissimilarity(act, offs, offt)
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_nonnegative_and_symmetric(self, rng):
        act = rng.standard_normal((4, 8, 8))
        offs = rng.uniform(-3, 3, (6, 2))
        offt = rng.uniform(-3, 3, (6, 2))
        out = similarity.self_dissimilarity(act, offs, offt)
        assert (out >= 0).all()
        np.testing.assert_allclose(out, similarity.self_dissimilarity(act, offt, offs))


class TestSelfDissimilarityReference:
    def test_identity_stack_is_pixel_difference(self, rng):
        image = rng.standard_normal((3, 10, 10))
        offs = np.array([[1.0, 0.0], [0.0, 2.0]])
        offt = np.array([[0.0, 0.0], [-1.0, 1.0]])
        values, interior = similarity.self_dissimilarity_reference(image, offs, offt, [], apply_relu=False)
        direct = similarity.self_dissimilarity(image, offs, offt, SHIFT_NEAREST)
        assert interior.any()
        np.testing.assert_allclose(values[:, interior], direct[:, interior], rtol=1e-12)

    def test_zero_weights_zero_everywhere(self, rng):
        image = rng.standard_normal((3, 9, 9))
        layers = [ConvLayerParams(np.zeros((4, 3, 3, 3)), np.zeros(4))]
        offs = np.array([[1.0, -1.0]])
        values, interior = similarity.self_dissimilarity_reference(image, offs, offs + 1, layers)
        np.testing.assert_allclose(values[:, interior], 0.0, atol=1e-15)

    def test_oracle_equivalence_random_config(self, rng):
        image = rng.uniform(0, 1, (3, 16, 16))
        w1 = rng.standard_normal((4, 3, 3, 3)) * 0.4
        w2 = rng.standard_normal((5, 4, 3, 3)) * 0.4
        layers = [
            ConvLayerParams(w1, rng.standard_normal(4) * 0.1),
            ConvLayerParams(w2, rng.standard_normal(5) * 0.1),
        ]
        offs = rng.integers(-2, 3, (8, 2)).astype(float)
        offt = rng.integers(-2, 3, (8, 2)).astype(float)
        act = similarity.run_conv_stack(image, layers)
        fast = similarity.self_dissimilarity(act, offs, offt, SHIFT_NEAREST)
        slow, interior = similarity.self_dissimilarity_reference(image, offs, offt, layers)
        assert interior.any()
        assert relative_error(fast[:, interior], slow[:, interior]) <= 1e-6


class TestSelfDissimilarityBackward:
    def test_zero_grad_out(self, rng):
        act = rng.standard_normal((3, 6, 6))
        offs = rng.uniform(-2, 2, (4, 2))
        offt = rng.uniform(-2, 2, (4, 2))
        ga, gs, gt = similarity.self_dissimilarity_backward(act, offs, offt, np.zeros((4, 6, 6)))
        assert not ga.any() and not gs.any() and not gt.any()

    def test_equal_streams_cancel(self, rng):
        act = rng.standard_normal((3, 6, 6))
        offs = rng.uniform(-2, 2, (4, 2))
        grad = rng.standard_normal((4, 6, 6))
        ga, gs, gt = similarity.self_dissimilarity_backward(act, offs, offs.copy(), grad)
        np.testing.assert_allclose(ga, 0.0, atol=1e-12)
        np.testing.assert_allclose(gs, -gt, atol=1e-12)

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_finite_differences_continuous(self, seed):
        rng = np.random.default_rng(seed)
        act = rng.standard_normal((3, 9, 10))
        # keep offsets clear of integer knots
        offs = rng.uniform(-2.3, 2.3, (4, 2))
        offt = rng.uniform(-2.3, 2.3, (4, 2))
        for arr in (offs, offt):
            frac = arr - np.floor(arr)
            arr[np.abs(frac) < 1e-2] += 0.05
            arr[np.abs(frac - 1) < 1e-2] -= 0.05
        probe = rng.standard_normal((4, 9, 10))

        def loss():
            return float((similarity.self_dissimilarity(act, offs, offt) * probe).sum())

        ga, gs, gt = similarity.self_dissimilarity_backward(act, offs, offt, probe)
        assert relative_error(ga, numerical_gradient(loss, act)) <= 1e-4
        assert relative_error(gs, numerical_gradient(loss, offs)) <= 1e-4
        assert relative_error(gt, numerical_gradient(loss, offt)) <= 1e-4

    def test_nearest_mode_activation_grads_exact(self, rng):
        act = rng.standard_normal((2, 8, 8))
        offs = rng.integers(-2, 3, (3, 2)).astype(float)
        offt = rng.integers(-2, 3, (3, 2)).astype(float)
        probe = rng.standard_normal((3, 8, 8))

        def loss():
            return float(
                (similarity.self_dissimilarity(act, offs, offt, SHIFT_NEAREST) * probe).sum()
            )

        ga, _, _ = similarity.self_dissimilarity_backward(act, offs, offt, probe, SHIFT_NEAREST)
        assert relative_error(ga, numerical_gradient(loss, act)) <= 1e-6

    def test_shape_mismatch_raises(self, rng):
        act = rng.standard_normal((2, 6, 6))
        offs = rng.uniform(-1, 1, (3, 2))
        with pytest.raises(ValueError):
            similarity.self_dissimilarity_backward(act, offs, offs, np.zeros((3, 5, 6)))


class TestGateAndPool:
    def test_zero_dissimilarity_gives_one(self):
        out = similarity.gate_and_pool(np.zeros((3, 5, 5)), 0.7, 1)
        np.testing.assert_allclose(out, 1.0)

    def test_radius_zero_pure_gating(self, rng):
        s = np.abs(rng.standard_normal((2, 6, 6)))
        out = similarity.gate_and_pool(s, 1.3, 0)
        np.testing.assert_allclose(out, np.exp(-s / 1.3))

    def test_single_low_value_dominates_window(self):
        s = np.full((1, 7, 7), 50.0)
        s[0, 3, 3] = 2.0
        out = similarity.gate_and_pool(s, 2.0, 1)
        # every window containing (3, 3) takes exp(-1)
        for y in (2, 3, 4):
            for x in (2, 3, 4):
                assert out[0, y, x] == pytest.approx(np.exp(-1.0))
        assert out[0, 0, 0] == pytest.approx(np.exp(-25.0))

    def test_output_in_unit_interval(self, rng):
        s = np.abs(rng.standard_normal((4, 8, 8))) * 3
        out = similarity.gate_and_pool(s, 0.5, 2)
        assert (out > 0).all() and (out <= 1).all()

    def test_bad_bandwidth_raises(self):
        with pytest.raises(ValueError):
            similarity.gate_and_pool(np.zeros((1, 3, 3)), 0.0, 1)


class TestGateAndPoolBackward:
    def test_zero_grad(self, rng):
        s = np.abs(rng.standard_normal((2, 5, 5)))
        gc, gb = similarity.gate_and_pool_backward(s, 1.0, 1, np.zeros((2, 5, 5)))
        assert not gc.any() and gb == 0.0

    def test_radius_zero_analytic_form(self, rng):
        s = np.abs(rng.standard_normal((2, 6, 6))) + 0.1
        probe = rng.standard_normal((2, 6, 6))
        lam = 0.9

        def loss():
            return float((similarity.gate_and_pool(s, lam, 0) * probe).sum())

        gc, gb = similarity.gate_and_pool_backward(s, lam, 0, probe)
        np.testing.assert_allclose(gc, probe * (-np.exp(-s / lam) / lam))
        assert relative_error(gc, numerical_gradient(loss, s)) <= 1e-4

    def test_constant_plane_bandwidth_closed_form(self, rng):
        s = np.full((2, 5, 5), 1.7)
        probe = rng.standard_normal((2, 5, 5))
        lam = 1.1
        _, gb = similarity.gate_and_pool_backward(s, lam, 1, probe)
        expected = float((probe * np.exp(-1.7 / lam) * 1.7 / lam**2).sum())
        assert gb == pytest.approx(expected, rel=1e-12)

    def test_pooled_finite_differences(self, rng):
        s = np.abs(rng.standard_normal((3, 7, 7))) + 0.05
        probe = rng.standard_normal((3, 7, 7))
        lam = 0.8

        def loss():
            return float((similarity.gate_and_pool(s, lam, 1) * probe).sum())

        gc, gb = similarity.gate_and_pool_backward(s, lam, 1, probe)
        assert relative_error(gc, numerical_gradient(loss, s)) <= 1e-4
        holder = np.array([lam])

        def loss_lam():
            return float((similarity.gate_and_pool(s, float(holder[0]), 1) * probe).sum())

        num = numerical_gradient(loss_lam, holder)[0]
        assert gb == pytest.approx(num, rel=1e-4)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), radius=st.integers(0, 2))
def test_property_pool_dominance(seed, radius):
    rng = np.random.default_rng(seed)
    s = np.abs(rng.standard_normal((2, 6, 6)))
    small = similarity.gate_and_pool(s, 1.0, 0)
    wide = similarity.gate_and_pool(s, 1.0, radius)
    assert (wide + 1e-12 >= small).all()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_property_stream_swap_symmetry(seed):
    rng = np.random.default_rng(seed)
    act = rng.standard_normal((2, 6, 6))
    offs = rng.uniform(-2, 2, (3, 2))
    offt = rng.uniform(-2, 2, (3, 2))
    a = similarity.self_dissimilarity(act, offs, offt)
    b = similarity.self_dissimilarity(act, offt, offs)
    np.testing.assert_allclose(a, b)
