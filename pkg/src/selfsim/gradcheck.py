"""Finite-difference verification of the analytic gradients.

Runs a scalar probe loss (random projection of the descriptor field)
through a small random model and compares extract_backward against
central finite differences, one result per parameter group. Loss
gradients from the contrastive objective are checked the same way.
Group errors are normalized by the largest gradient magnitude in the
group so that near-zero entries do not inflate the ratio.
"""

from __future__ import annotations

import numpy as np

from . import descriptor as desc
from . import learning
from .model import (
    BackboneConfig,
    ModelConfig,
    SHIFT_BILINEAR,
    SHIFT_NEAREST,
    StagePlan,
    init_model,
)

PASS_THRESHOLD = 1e-4

SMALL_CONFIG_KW = dict(
    backbone=BackboneConfig(
        stages=(
            StagePlan(layers=1, channels=4, kernel=3, downsample=2),
            StagePlan(layers=1, channels=6, kernel=3, downsample=2),
            StagePlan(layers=1, channels=6, kernel=3, downsample=1),
        )
    ),
    patterns_per_level=(4, 4, 4),
    pool_radius=1,
    pattern_radius=3.0,
)


def group_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def numerical_gradient(loss_fn, array: np.ndarray, indices=None, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of loss_fn() w.r.t. entries of `array`,
    perturbed in place. Returns gradients for `indices` (flat, default all)."""
    flat = array.reshape(-1)
    indices = list(range(flat.size)) if indices is None else list(indices)
    out = np.empty(len(indices))
    for j, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + h
        fp = loss_fn()
        flat[i] = orig - h
        fm = loss_fn()
        flat[i] = orig
        out[j] = (fp - fm) / (2.0 * h)
    return out


def _probe_setup(seed: int, shift_mode: str):
    rng = np.random.default_rng(seed)
    config = ModelConfig(shift_mode=shift_mode, **SMALL_CONFIG_KW)
    params = init_model(config, seed=seed)
    image = rng.uniform(0.0, 1.0, size=(3, 16, 16))
    probe = rng.standard_normal((config.descriptor_dim, 16, 16))
    return params, image, probe, rng


def check_model_gradients(
    seed: int = 0,
    shift_mode: str = SHIFT_BILINEAR,
    weight_samples: int = 10,
    h: float = 1e-6,
) -> dict[str, float]:
    """Max relative FD error for each parameter group of the descriptor
    extractor: conv weights, both offset streams, and the gating bandwidth.

    In integer-nearest mode the offset entries are reported as NaN (the
    forward is piecewise constant there; its gradient is a declared
    surrogate, not an adjoint).
    """
    params, image, probe, rng = _probe_setup(seed, shift_mode)

    def loss() -> float:
        return float((desc.extract_dense(image, params).values * probe).sum())

    grads = desc.extract_backward(image, params, probe)
    errors: dict[str, float] = {}

    analytic, numeric = [], []
    for si, layers in enumerate(params.backbone):
        for li, p in enumerate(layers):
            n = p.weights.size
            take = min(weight_samples, n)
            idx = rng.choice(n, size=take, replace=False)
            analytic.append(grads.backbone[si][li].weights.reshape(-1)[idx])
            numeric.append(numerical_gradient(loss, p.weights, idx, h))
            bidx = [int(rng.integers(p.bias.size))]
            analytic.append(grads.backbone[si][li].bias.reshape(-1)[bidx])
            numeric.append(numerical_gradient(loss, p.bias, bidx, h))
    errors["conv_weights"] = group_relative_error(
        np.concatenate(analytic), np.concatenate(numeric)
    )

    for name, attr, grad_list in (
        ("offsets_s", "offsets_s", grads.offsets_s),
        ("offsets_t", "offsets_t", grads.offsets_t),
    ):
        if shift_mode == SHIFT_NEAREST:
            errors[name] = float("nan")
            continue
        analytic, numeric = [], []
        for k, lp in enumerate(params.patterns):
            arr = getattr(lp, attr)
            analytic.append(grad_list[k].reshape(-1))
            numeric.append(numerical_gradient(loss, arr, None, h))
        errors[name] = group_relative_error(
            np.concatenate(analytic), np.concatenate(numeric)
        )

    analytic, numeric = [], []
    for k, lp in enumerate(params.patterns):
        holder = np.array([lp.log_bandwidth])

        def loss_bw(k=k, lp=lp, holder=holder) -> float:
            old = lp.log_bandwidth
            lp.log_bandwidth = float(holder[0])
            value = loss()
            lp.log_bandwidth = old
            return value

        analytic.append(np.array([grads.log_bandwidth[k]]))
        numeric.append(numerical_gradient(loss_bw, holder, [0], h))
    errors["bandwidth"] = group_relative_error(
        np.concatenate(analytic), np.concatenate(numeric)
    )
    return errors


def check_loss_gradient(seed: int = 0, samples: int = 24, h: float = 1e-6) -> float:
    """Max relative FD error of the contrastive loss gradient w.r.t. the
    two descriptor fields, over a random mined-style batch."""
    rng = np.random.default_rng(seed)
    dim, height, width = 6, 9, 9
    # scaled so negative-pair distances straddle the margin hinge
    values_a = 0.15 * rng.standard_normal((dim, height, width))
    values_b = 0.15 * rng.standard_normal((dim, height, width))
    field_a = desc.DenseDescriptorField(values_a, [(0, (0, dim))])
    field_b = desc.DenseDescriptorField(values_b, [(0, (0, dim))])
    margin = 0.2

    def pick(n: int) -> np.ndarray:
        return np.stack(
            [
                rng.integers(0, height, n),
                rng.integers(0, width, n),
                rng.integers(0, height, n),
                rng.integers(0, width, n),
            ],
            axis=1,
        )

    def away_from_hinge(pairs: np.ndarray) -> np.ndarray:
        a = values_a[:, pairs[:, 0], pairs[:, 1]]
        b = values_b[:, pairs[:, 2], pairs[:, 3]]
        d2 = ((a - b) ** 2).sum(axis=0)
        return pairs[np.abs(d2 - margin) > 1e-3]

    batch = learning.TrainingBatch(
        positives=away_from_hinge(pick(8))[:6], negatives=away_from_hinge(pick(8))[:6]
    )

    def loss() -> float:
        return learning.contrastive_loss(batch, field_a, field_b, margin)[0]

    _, grad_a, grad_b = learning.contrastive_loss(batch, field_a, field_b, margin)
    worst = 0.0
    for values, grad in ((values_a, grad_a), (values_b, grad_b)):
        idx = rng.choice(values.size, size=samples, replace=False)
        numeric = numerical_gradient(loss, values, idx, h)
        analytic = grad.reshape(-1)[idx]
        worst = max(worst, group_relative_error(analytic, numeric))
    return worst
