import numpy as np
import pytest

from selfsim.descriptor import DenseDescriptorField
from selfsim.learning import Bbox
from selfsim import matching
from selfsim.matching import FlowField


def unique_field(rng, dim, h, w):
    """Descriptor field whose columns are pairwise distinct."""
    values = rng.standard_normal((dim, h, w))
    values /= np.linalg.norm(values, axis=0, keepdims=True)
    return DenseDescriptorField(values, [(0, (0, dim))])


class TestNnFlow:
    def test_self_match_zero_flow(self, rng):
        field = unique_field(rng, 8, 9, 9)
        flow = matching.nn_flow(field, field)
        assert not flow.flow.any()
        assert flow.valid.all()

    def test_translated_field_recovers_shift(self, rng):
        dim, h, w = 8, 10, 12
        a = unique_field(rng, dim, h, w)
        dx, dy = 3, 2
        shifted = np.roll(np.roll(a.values, dy, axis=1), dx, axis=2)
        b = DenseDescriptorField(shifted, a.level_spans)
        flow = matching.nn_flow(a, b)
        interior = np.zeros((h, w), dtype=bool)
        interior[: h - dy, : w - dx] = True
        np.testing.assert_allclose(flow.flow[0][interior], dx)
        np.testing.assert_allclose(flow.flow[1][interior], dy)

    def test_single_pixel_search_region(self, rng):
        a = unique_field(rng, 6, 7, 7)
        b = unique_field(rng, 6, 7, 7)
        flow = matching.nn_flow(a, b, search_bbox=Bbox(4, 2, 1, 1))
        ys, xs = np.mgrid[0:7, 0:7]
        np.testing.assert_allclose(flow.flow[0], 4 - xs)
        np.testing.assert_allclose(flow.flow[1], 2 - ys)

    def test_source_bbox_restricts_validity(self, rng):
        a = unique_field(rng, 6, 8, 8)
        flow = matching.nn_flow(a, a, source_bbox=Bbox(2, 2, 3, 3))
        assert flow.valid.sum() == 9
        assert flow.valid[2:5, 2:5].all()

    def test_resolution_mismatch_raises(self, rng):
        a = unique_field(rng, 4, 6, 6)
        b = unique_field(rng, 4, 7, 6)
        with pytest.raises(ValueError):
            matching.nn_flow(a, b)

    def test_window_radius_zero_is_zero_flow(self, rng):
        a = unique_field(rng, 6, 7, 7)
        b = unique_field(rng, 6, 7, 7)
        flow = matching.nn_flow(a, b, window_radius=0)
        assert not flow.flow.any()
        assert flow.valid.all()

    def test_large_window_matches_full_search(self, rng):
        a = unique_field(rng, 6, 8, 9)
        b = unique_field(rng, 6, 8, 9)
        full = matching.nn_flow(a, b)
        windowed = matching.nn_flow(a, b, window_radius=20)
        np.testing.assert_array_equal(full.flow, windowed.flow)


class TestLrConsistency:
    def test_identity_flows_all_true(self):
        zero = FlowField(np.zeros((2, 5, 5)), np.ones((5, 5), bool))
        assert matching.lr_consistency_mask(zero, zero, 0.0).all()

    def test_exact_inverse_all_true(self):
        h = w = 6
        ab = FlowField(np.stack([np.full((h, w), 2.0), np.zeros((h, w))]), np.ones((h, w), bool))
        ba = FlowField(np.stack([np.full((h, w), -2.0), np.zeros((h, w))]), np.ones((h, w), bool))
        assert matching.lr_consistency_mask(ab, ba, 0.0).all()

    def test_non_inverse_all_false(self):
        h = w = 5
        ab = FlowField(np.stack([np.full((h, w), 3.0), np.zeros((h, w))]), np.ones((h, w), bool))
        zero = FlowField(np.zeros((2, h, w)), np.ones((h, w), bool))
        mask = matching.lr_consistency_mask(ab, zero, 2.9)
        assert not mask.any()


class TestSmoothFlow:
    def test_constant_flow_unchanged(self):
        flow = FlowField(np.full((2, 6, 6), 1.5), np.ones((6, 6), bool))
        out = matching.smooth_flow(flow, iterations=3)
        np.testing.assert_array_equal(out.flow, flow.flow)

    def test_zero_iterations_identity(self, rng):
        flow = FlowField(rng.standard_normal((2, 5, 5)), rng.uniform(size=(5, 5)) > 0.5)
        out = matching.smooth_flow(flow, iterations=0)
        np.testing.assert_array_equal(out.flow, flow.flow)
        np.testing.assert_array_equal(out.valid, flow.valid)

    def test_single_outlier_replaced(self):
        flow_arr = np.full((2, 7, 7), 2.0)
        flow_arr[0, 3, 3] = 9.0
        flow = FlowField(flow_arr, np.ones((7, 7), bool))
        out = matching.smooth_flow(flow, iterations=1)
        assert out.flow[0, 3, 3] == pytest.approx(2.0)

    def test_invalid_pixels_filled_and_marked_valid(self):
        flow_arr = np.full((2, 6, 6), 1.0)
        valid = np.ones((6, 6), bool)
        valid[2, 2] = False
        flow_arr[:, 2, 2] = 77.0
        out = matching.smooth_flow(FlowField(flow_arr, valid), iterations=1)
        assert out.flow[0, 2, 2] == pytest.approx(1.0)
        assert out.valid.all()

    def test_idempotent_on_locally_constant(self, rng):
        flow_arr = np.full((2, 8, 8), 3.0)
        valid = rng.uniform(size=(8, 8)) > 0.3
        valid[0, 0] = True  # keep at least one seed
        once = matching.smooth_flow(FlowField(flow_arr.copy(), valid), iterations=1)
        twice = matching.smooth_flow(once, iterations=1)
        np.testing.assert_array_equal(once.flow, twice.flow)

    def test_negative_iterations_raise(self):
        flow = FlowField(np.zeros((2, 3, 3)), np.ones((3, 3), bool))
        with pytest.raises(ValueError):
            matching.smooth_flow(flow, iterations=-1)


class TestWarpImage:
    def test_zero_flow_returns_target(self, rng):
        img = rng.uniform(0, 1, (3, 6, 7))
        flow = FlowField(np.zeros((2, 6, 7)), np.ones((6, 7), bool))
        np.testing.assert_allclose(matching.warp_image(img, flow), img)

    def test_integer_shift(self, rng):
        img = rng.uniform(0, 1, (2, 6, 8))
        flow = FlowField(
            np.stack([np.full((6, 8), 2.0), np.zeros((6, 8))]), np.ones((6, 8), bool)
        )
        out = matching.warp_image(img, flow)
        np.testing.assert_allclose(out[:, :, : 8 - 2], img[:, :, 2:])

    def test_half_pixel_on_ramp(self):
        img = np.tile(np.arange(8.0), (1, 4, 1))
        flow = FlowField(
            np.stack([np.full((4, 8), 0.5), np.zeros((4, 8))]), np.ones((4, 8), bool)
        )
        out = matching.warp_image(img, flow)
        np.testing.assert_allclose(out[0, :, : 8 - 1], img[0, :, :-1] + 0.5)


def test_flow_to_color_shape_and_validity(rng):
    flow = FlowField(rng.standard_normal((2, 6, 6)), rng.uniform(size=(6, 6)) > 0.3)
    img = matching.flow_to_color(flow)
    assert img.shape == (3, 6, 6)
    assert (img >= 0).all() and (img <= 1).all()
    np.testing.assert_allclose(img[:, ~flow.valid], 0.0)
