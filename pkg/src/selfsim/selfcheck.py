"""Built-in end-to-end checks: single-pass vs per-patch oracle equivalence,
core invariants, and a timing comparison of the two formulations."""

from __future__ import annotations

import io
import time
from dataclasses import dataclass

import numpy as np

from . import fileio, ops, similarity
from .model import init_model
from .ops import ConvLayerParams


def random_conv_stack(rng: np.random.Generator, in_c: int, depth: int) -> list[ConvLayerParams]:
    layers = []
    c = in_c
    for _ in range(depth):
        out_c = int(rng.integers(3, 7))
        k = int(rng.choice([1, 3]))
        fan = (c + out_c) * k * k
        w = rng.uniform(-1.0, 1.0, size=(out_c, c, k, k)) * np.sqrt(6.0 / fan)
        b = rng.uniform(-0.3, 0.3, size=out_c)
        layers.append(ConvLayerParams(w, b))
        c = out_c
    return layers


def oracle_equivalence_error(seed: int) -> float:
    """One random configuration: integer offsets, 1-3 conv layers, image at
    most 32x32. Returns the max relative deviation between the single-pass
    self-similarity and the per-patch reference on interior pixels."""
    rng = np.random.default_rng(seed)
    h = int(rng.integers(12, 25))
    w = int(rng.integers(12, 25))
    image = rng.uniform(0.0, 1.0, size=(3, h, w))
    layers = random_conv_stack(rng, 3, int(rng.integers(1, 4)))
    apply_relu = bool(rng.integers(0, 2))
    num = int(rng.integers(4, 9))
    offs = rng.integers(-2, 3, size=(num, 2)).astype(np.float64)
    offt = rng.integers(-2, 3, size=(num, 2)).astype(np.float64)

    act = similarity.run_conv_stack(image, layers, apply_relu)
    fast = similarity.self_dissimilarity(act, offs, offt, mode="integer-nearest")
    slow, interior = similarity.self_dissimilarity_reference(image, offs, offt, layers, apply_relu)
    if not interior.any():
        raise RuntimeError("empty interior in oracle configuration")
    diff = np.abs(fast[:, interior] - slow[:, interior])
    scale = max(np.abs(slow[:, interior]).max(), 1e-12)
    return float(diff.max() / scale)


def run_oracle_suite(n_configs: int = 20, base_seed: int = 0) -> float:
    return max(oracle_equivalence_error(base_seed + i) for i in range(n_configs))


@dataclass
class SpeedReport:
    reference_seconds: float
    efficient_seconds: float

    @property
    def speedup(self) -> float:
        return self.reference_seconds / max(self.efficient_seconds, 1e-12)


def speed_report(seed: int = 0, size: int = 64, num_patterns: int = 64) -> SpeedReport:
    """Time the per-patch reference against the single-pass formulation on
    the same task (one conv layer, `num_patterns` patterns, size x size)."""
    rng = np.random.default_rng(seed)
    image = rng.uniform(0.0, 1.0, size=(3, size, size))
    layers = random_conv_stack(rng, 3, 1)
    offs = rng.integers(-3, 4, size=(num_patterns, 2)).astype(np.float64)
    offt = rng.integers(-3, 4, size=(num_patterns, 2)).astype(np.float64)

    t0 = time.perf_counter()
    act = similarity.run_conv_stack(image, layers, True)
    similarity.self_dissimilarity(act, offs, offt, mode="integer-nearest")
    t_eff = time.perf_counter() - t0

    t0 = time.perf_counter()
    similarity.self_dissimilarity_reference(image, offs, offt, layers, True)
    t_ref = time.perf_counter() - t0
    return SpeedReport(reference_seconds=t_ref, efficient_seconds=t_eff)


def run_invariant_suite(seed: int = 0) -> list[str]:
    """Quick sanity properties across modules; returns failure descriptions."""
    rng = np.random.default_rng(seed)
    failures = []

    act = rng.standard_normal((4, 10, 12))
    offs = rng.uniform(-2.0, 2.0, size=(5, 2))
    offt = rng.uniform(-2.0, 2.0, size=(5, 2))
    s = similarity.self_dissimilarity(act, offs, offt)
    if s.min() < 0:
        failures.append("self-similarity output must be nonnegative")
    swapped = similarity.self_dissimilarity(act, offt, offs)
    if not np.allclose(s, swapped, atol=1e-12):
        failures.append("self-similarity must be symmetric in the two streams")
    pooled0 = similarity.gate_and_pool(s, 1.0, 0)
    pooled1 = similarity.gate_and_pool(s, 1.0, 1)
    if pooled1.max() > 1.0 or pooled1.min() <= 0.0:
        failures.append("gated responses must lie in (0, 1]")
    if (pooled1 + 1e-12 < pooled0).any():
        failures.append("pooling over a larger window must dominate")

    x = rng.standard_normal((3, 7, 9))
    if not np.allclose(ops.bilinear_resample(x, 7, 9), x):
        failures.append("same-size resampling must be the identity")
    eye = ConvLayerParams(np.eye(3).reshape(3, 3, 1, 1), np.zeros(3))
    if not np.allclose(ops.conv2d(x, eye), x):
        failures.append("identity 1x1 convolution must be the identity")
    gx, gy = ops.spatial_gradient(np.full((2, 6, 6), 3.7))
    if gx.any() or gy.any():
        failures.append("spatial gradient of a constant must vanish")

    params = init_model(seed=seed)
    buf = io.BytesIO()
    fileio.save_model(buf, params)
    blob = buf.getvalue()
    buf2 = io.BytesIO()
    fileio.save_model(buf2, fileio.load_model(io.BytesIO(blob)))
    if buf2.getvalue() != blob:
        failures.append("model file round trip must be bit-exact")
    return failures
