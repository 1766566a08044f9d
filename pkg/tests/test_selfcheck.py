import numpy as np

from selfsim import gradcheck, selfcheck
from selfsim.model import SHIFT_NEAREST, ModelConfig, init_model
from selfsim import descriptor as desc


def test_oracle_configs_agree():
    worst = max(selfcheck.oracle_equivalence_error(seed) for seed in range(4))
    assert worst <= 1e-6


def test_invariant_suite_clean():
    assert selfcheck.run_invariant_suite(seed=0) == []


def test_model_gradcheck_groups_pass():
    errors = gradcheck.check_model_gradients(seed=11)
    assert set(errors) == {"conv_weights", "offsets_s", "offsets_t", "bandwidth"}
    assert all(err <= gradcheck.PASS_THRESHOLD for err in errors.values())


def test_nearest_mode_marks_offsets_approximate():
    errors = gradcheck.check_model_gradients(seed=5, shift_mode=SHIFT_NEAREST)
    assert np.isnan(errors["offsets_s"]) and np.isnan(errors["offsets_t"])
    assert errors["conv_weights"] <= gradcheck.PASS_THRESHOLD
    assert errors["bandwidth"] <= gradcheck.PASS_THRESHOLD


def test_loss_gradcheck_passes():
    assert gradcheck.check_loss_gradient(seed=3) <= gradcheck.PASS_THRESHOLD


def test_integer_nearest_extraction_end_to_end(rng):
    config = ModelConfig(shift_mode=SHIFT_NEAREST, **gradcheck.SMALL_CONFIG_KW)
    params = init_model(config, seed=2)
    image = rng.uniform(0, 1, (3, 16, 16))
    field = desc.extract_dense(image, params)
    norms = np.linalg.norm(field.values, axis=0)
    np.testing.assert_allclose(norms, 1.0, atol=1e-5)
    grads = desc.extract_backward(image, params, rng.standard_normal(field.shape))
    assert any(g.any() for g in grads.offsets_s)
    assert np.isfinite(grads.log_bandwidth).all()
