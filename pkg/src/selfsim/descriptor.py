"""Dense descriptor assembly.

Pipeline per pyramid level: self-similarity responses for the level's
sampling patterns, exponential gating and window max-pooling at feature
resolution, bilinear upsampling to input resolution. Level outputs are
concatenated along channels and the per-pixel descriptor is normalized to
unit length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backbone as bb
from . import ops, similarity
from .model import ModelParams
from .ops import ConvLayerParams


@dataclass
class DenseDescriptorField:
    """Unit-norm per-pixel descriptors (L, H, W) and the channel ranges each
    pyramid level occupies in the concatenation."""

    values: np.ndarray
    level_spans: list[tuple[int, tuple[int, int]]]

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass
class ModelGrads:
    """Gradient of a scalar loss w.r.t. every learnable parameter group;
    mirrors the ModelParams structure (bandwidth gradients in log-space)."""

    backbone: list[list[ConvLayerParams]]
    offsets_s: list[np.ndarray]
    offsets_t: list[np.ndarray]
    log_bandwidth: list[float]


def field_from_values(
    values: np.ndarray, patterns_per_level: tuple[int, ...] | None = None
) -> DenseDescriptorField:
    """Rebuild a descriptor field from stored values (e.g. a tensor file).

    Channel spans are reconstructed from patterns_per_level when given,
    otherwise the whole range is treated as a single level.
    """
    if values.ndim != 3:
        raise ValueError("descriptor values must have shape (L, H, W)")
    if patterns_per_level is None:
        spans = [(0, (0, values.shape[0]))]
    else:
        if sum(patterns_per_level) != values.shape[0]:
            raise ValueError("patterns_per_level does not sum to the channel count")
        spans = []
        start = 0
        for k, n in enumerate(patterns_per_level):
            spans.append((k, (start, start + n)))
            start += n
    return DenseDescriptorField(values, spans)


def descriptor_at(field: DenseDescriptorField, x: int, y: int) -> np.ndarray:
    """The descriptor column at pixel (x, y); raises on out-of-bounds."""
    _, h, w = field.values.shape
    if not (0 <= x < w and 0 <= y < h):
        raise IndexError(f"pixel ({x}, {y}) outside field of size {w}x{h}")
    return field.values[:, y, x]


def _check_image_size(image: np.ndarray, params: ModelParams) -> None:
    max_stride = max(params.config.backbone.strides)
    h, w = image.shape[1:]
    if -(-h // max_stride) < 2 or -(-w // max_stride) < 2:
        raise ValueError(
            f"image {w}x{h} too small for the deepest stride {max_stride}"
        )


def _levels_forward(pyramid: bb.FeaturePyramid, params: ModelParams, out_h: int, out_w: int):
    cfg = params.config
    dissim_levels = []
    upsampled = []
    spans = []
    start = 0
    for k, lp in enumerate(params.patterns):
        act = pyramid.activations[k]
        s = similarity.self_dissimilarity(act, lp.offsets_s, lp.offsets_t, cfg.shift_mode)
        pooled = similarity.gate_and_pool(s, lp.bandwidth, cfg.pool_radius)
        dissim_levels.append(s)
        upsampled.append(ops.bilinear_resample(pooled, out_h, out_w))
        spans.append((k, (start, start + lp.num_patterns)))
        start += lp.num_patterns
    stacked = np.concatenate(upsampled, axis=0)
    return stacked, dissim_levels, spans


def extract_dense(image: np.ndarray, params: ModelParams) -> DenseDescriptorField:
    """Dense descriptor field at input resolution (see module docstring)."""
    field, _ = extract_dense_cached(image, params)
    return field


def extract_dense_cached(image: np.ndarray, params: ModelParams):
    """extract_dense plus the forward cache consumed by extract_backward."""
    _check_image_size(image, params)
    pyramid, bb_cache = bb.forward_cached(image, params.backbone, params.config.backbone)
    h, w = image.shape[1:]
    stacked, dissim_levels, spans = _levels_forward(pyramid, params, h, w)
    values = ops.channelwise_l2_normalize(stacked)
    field = DenseDescriptorField(values, spans)
    cache = {
        "pyramid": pyramid,
        "backbone": bb_cache,
        "stacked": stacked,
        "dissim_levels": dissim_levels,
    }
    return field, cache


def zero_grads(params: ModelParams) -> ModelGrads:
    return ModelGrads(
        backbone=[
            [ConvLayerParams(np.zeros_like(p.weights), np.zeros_like(p.bias)) for p in layers]
            for layers in params.backbone
        ],
        offsets_s=[np.zeros_like(lp.offsets_s) for lp in params.patterns],
        offsets_t=[np.zeros_like(lp.offsets_t) for lp in params.patterns],
        log_bandwidth=[0.0 for _ in params.patterns],
    )


def accumulate_grads(total: ModelGrads, part: ModelGrads) -> ModelGrads:
    for gt, gp in zip(total.backbone, part.backbone):
        for a, b in zip(gt, gp):
            a.weights += b.weights
            a.bias += b.bias
    for k in range(len(total.offsets_s)):
        total.offsets_s[k] += part.offsets_s[k]
        total.offsets_t[k] += part.offsets_t[k]
        total.log_bandwidth[k] += part.log_bandwidth[k]
    return total


def extract_backward(
    image: np.ndarray,
    params: ModelParams,
    grad_field: np.ndarray,
    cache=None,
    freeze_backbone: bool = False,
) -> ModelGrads:
    """Exact adjoint of extract_dense w.r.t. all learnable parameters.

    grad_field is the loss gradient w.r.t. the normalized descriptor field.
    With freeze_backbone the conv-parameter gradients are returned as zeros
    and the backbone chain is skipped.
    """
    if cache is None:
        _, cache = extract_dense_cached(image, params)
    cfg = params.config
    if grad_field.shape != cache["stacked"].shape:
        raise ValueError("grad_field shape does not match the descriptor field")
    grads = zero_grads(params)
    g_stacked = ops.channelwise_l2_normalize_backward(cache["stacked"], grad_field)
    grad_taps = []
    start = 0
    for k, lp in enumerate(params.patterns):
        stop = start + lp.num_patterns
        act = cache["pyramid"].activations[k]
        g_up = g_stacked[start:stop]
        g_pooled = ops.bilinear_resample_backward(g_up, act.shape[1], act.shape[2])
        g_dissim, g_bw = similarity.gate_and_pool_backward(
            cache["dissim_levels"][k], lp.bandwidth, cfg.pool_radius, g_pooled
        )
        g_act, g_s, g_t = similarity.self_dissimilarity_backward(
            act, lp.offsets_s, lp.offsets_t, g_dissim, cfg.shift_mode
        )
        grads.offsets_s[k] = g_s
        grads.offsets_t[k] = g_t
        # chain rule onto log(bandwidth)
        grads.log_bandwidth[k] = g_bw * lp.bandwidth
        grad_taps.append(g_act)
        start = stop
    if not freeze_backbone:
        grads.backbone = bb.backbone_backward(
            image, params.backbone, cfg.backbone, grad_taps, cache=cache["backbone"]
        )
    return grads


def extract_from_pyramid(
    pyramid: bb.FeaturePyramid, params: ModelParams, out_h: int, out_w: int
) -> DenseDescriptorField:
    """Assemble a descriptor field from an injected (frozen) pyramid."""
    if pyramid.num_levels != params.config.num_levels:
        raise ValueError(
            f"pyramid has {pyramid.num_levels} levels, model expects {params.config.num_levels}"
        )
    stacked, _, spans = _levels_forward(pyramid, params, out_h, out_w)
    return DenseDescriptorField(ops.channelwise_l2_normalize(stacked), spans)
