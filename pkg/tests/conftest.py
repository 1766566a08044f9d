import numpy as np
import pytest


def numerical_gradient(loss_fn, array, h=1e-6):
    """Central finite differences of a scalar loss over every entry of
    `array`, perturbing it in place. Independent oracle for all adjoints."""
    flat = array.reshape(-1)
    out = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = loss_fn()
        flat[i] = orig - h
        fm = loss_fn()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(array.shape)


def relative_error(analytic, numeric):
    """Max deviation normalized by the largest magnitude in either array."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(
        np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12
    )
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_model():
    from selfsim.model import BackboneConfig, ModelConfig, StagePlan, init_model

    config = ModelConfig(
        backbone=BackboneConfig(
            stages=(
                StagePlan(layers=1, channels=4, kernel=3, downsample=2),
                StagePlan(layers=1, channels=6, kernel=3, downsample=2),
                StagePlan(layers=1, channels=6, kernel=3, downsample=1),
            )
        ),
        patterns_per_level=(4, 4, 4),
        pattern_radius=3.0,
    )
    return init_model(config, seed=7)
