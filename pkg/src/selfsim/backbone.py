"""Small trainable convolutional feature extractor.

Stages of conv+ReLU layers, optionally downsampled 2x at entry by average
pooling; the output of every stage is exposed as one pyramid level after
per-pixel channel normalization, while the unnormalized output feeds the
next stage. Externally computed pyramids can be injected from files in
place of the built-in extractor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .model import BackboneConfig
from .ops import ConvLayerParams


@dataclass
class FeaturePyramid:
    """Per-level activations (C_k, h_k, w_k) with their strides relative to
    the input image; strides must be non-decreasing."""

    activations: list[np.ndarray]
    strides: list[int]

    def __post_init__(self) -> None:
        if len(self.activations) != len(self.strides):
            raise ValueError("one stride per pyramid level required")
        if len(self.activations) < 1:
            raise ValueError("pyramid needs at least one level")
        for a, b in zip(self.strides, self.strides[1:]):
            if b < a:
                raise ValueError(f"pyramid strides must be non-decreasing, got {self.strides}")

    @property
    def num_levels(self) -> int:
        return len(self.activations)


def _prepare_image(image: np.ndarray, in_channels: int) -> np.ndarray:
    if image.ndim != 3:
        raise ValueError("image must have shape (C, H, W)")
    if image.shape[0] == in_channels:
        return image
    if image.shape[0] == 1:
        return np.repeat(image, in_channels, axis=0)
    raise ValueError(
        f"image has {image.shape[0]} channels, backbone expects {in_channels} (or 1)"
    )


def _check_params(params: list[list[ConvLayerParams]], config: BackboneConfig) -> None:
    if len(params) != len(config.stages):
        raise ValueError("backbone params do not match the configured stage count")
    in_c = config.in_channels
    for stage, layers in zip(config.stages, params):
        if len(layers) != stage.layers:
            raise ValueError("stage layer count mismatch")
        for p in layers:
            if p.in_channels != in_c or p.out_channels != stage.channels:
                raise ValueError(
                    f"layer shape {p.weights.shape} does not fit stage plan {stage}"
                )
            if p.weights.shape[2] != stage.kernel:
                raise ValueError("layer kernel size does not match stage plan")
            in_c = stage.channels


def forward_cached(image: np.ndarray, params: list[list[ConvLayerParams]], config: BackboneConfig):
    """Run all stages, keeping every intermediate needed by the adjoint."""
    _check_params(params, config)
    x = _prepare_image(image, config.in_channels)
    cache = {"image": x, "stages": []}
    taps = []
    strides = []
    stride = 1
    for stage, layers in zip(config.stages, params):
        sc = {"pool_in_shape": None, "conv_inputs": [], "conv_outputs": []}
        if stage.downsample == 2:
            sc["pool_in_shape"] = x.shape[1:]
            x = ops.avgpool2(x)
        for p in layers:
            sc["conv_inputs"].append(x)
            x = ops.conv2d(x, p)
            sc["conv_outputs"].append(x)
            x = ops.relu(x)
        sc["stage_out"] = x
        cache["stages"].append(sc)
        stride *= stage.downsample
        taps.append(ops.channelwise_l2_normalize(x))
        strides.append(stride)
    return FeaturePyramid(taps, strides), cache


def backbone_forward(
    image: np.ndarray, params: list[list[ConvLayerParams]], config: BackboneConfig
) -> FeaturePyramid:
    """Extract the feature pyramid; each exposed level is channel-normalized."""
    pyramid, _ = forward_cached(image, params, config)
    return pyramid


def backbone_backward(
    image: np.ndarray,
    params: list[list[ConvLayerParams]],
    config: BackboneConfig,
    grad_taps: list[np.ndarray],
    cache=None,
) -> list[list[ConvLayerParams]]:
    """Exact adjoint of backbone_forward onto the conv parameters.

    grad_taps holds one gradient array per exposed (normalized) level; a
    stage output feeds both its own tap and the next stage, so the two
    gradient paths sum.
    """
    if cache is None:
        _, cache = forward_cached(image, params, config)
    if len(grad_taps) != len(params):
        raise ValueError("need one tap gradient per pyramid level")
    grads: list[list[ConvLayerParams]] = [
        [ConvLayerParams(np.zeros_like(p.weights), np.zeros_like(p.bias)) for p in layers]
        for layers in params
    ]
    g_trunk = None
    for k in reversed(range(len(params))):
        sc = cache["stages"][k]
        g = ops.channelwise_l2_normalize_backward(sc["stage_out"], grad_taps[k])
        if g_trunk is not None:
            g = g + g_trunk
        for j in reversed(range(len(params[k]))):
            g = ops.relu_backward(sc["conv_outputs"][j], g)
            g, gp = ops.conv2d_backward(sc["conv_inputs"][j], params[k][j], g)
            grads[k][j].weights += gp.weights
            grads[k][j].bias += gp.bias
        if sc["pool_in_shape"] is not None:
            g = ops.avgpool2_backward(g, *sc["pool_in_shape"])
        g_trunk = g
    return grads


def inject_pyramid(path) -> FeaturePyramid:
    """Load an externally computed pyramid from the shared tensor file
    format; the result is treated as frozen (no backbone gradients)."""
    from . import fileio

    return fileio.load_pyramid(path)
