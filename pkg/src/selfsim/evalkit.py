"""Matching metrics and synthetic ground-truth pair generation.

Metrics: percentage of correct keypoints (PCK) at a bbox-relative radius,
and the fraction of foreground pixels whose flow endpoint error stays
under a threshold after rescaling so the larger image dimension is 100
pixels. The synthetic generator warps a source image by a random
similarity transform plus a low-frequency sinusoidal displacement and
returns the exact displacement field, bboxes, and a warped keypoint grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .learning import Bbox, ImagePairSample
from .matching import FlowField


@dataclass
class KeypointSet:
    """Real-valued (x, y) keypoints with the object bbox they live in."""

    points: np.ndarray
    bbox: Bbox

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError("keypoints must have shape (n, 2)")


@dataclass
class GroundTruthFlow:
    flow: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        self.flow = np.asarray(self.flow, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.flow.ndim != 3 or self.flow.shape[0] != 2:
            raise ValueError("ground-truth flow must have shape (2, H, W)")
        if self.mask.shape != self.flow.shape[1:]:
            raise ValueError("mask must match the flow resolution")
        if not np.isfinite(self.flow[:, self.mask]).all():
            raise ValueError("ground-truth flow must be finite on the mask")


def pck(
    pred_flow: FlowField,
    source_keypoints: np.ndarray,
    target_keypoints: np.ndarray,
    bbox: Bbox,
    alpha: float = 0.1,
) -> float:
    """Fraction of keypoints the flow transfers to within
    alpha * max(bbox height, bbox width) of their ground-truth position."""
    src = np.asarray(source_keypoints, dtype=np.float64)
    tgt = np.asarray(target_keypoints, dtype=np.float64)
    if src.shape != tgt.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ValueError("keypoint lists must be matched (n, 2) arrays")
    if len(src) == 0:
        raise ValueError("empty keypoint list")
    moved = ops.bilinear_sample_at(pred_flow.flow, src[:, 1], src[:, 0])
    warped = src + moved.T
    err = np.hypot(warped[:, 0] - tgt[:, 0], warped[:, 1] - tgt[:, 1])
    return float((err <= alpha * max(bbox.h, bbox.w)).mean())


def _rescale_flow(flow: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    h, w = flow.shape[1:]
    out = ops.bilinear_resample(flow, new_h, new_w)
    sx = (new_w - 1) / (w - 1) if w > 1 else 1.0
    sy = (new_h - 1) / (h - 1) if h > 1 else 1.0
    out[0] *= sx
    out[1] *= sy
    return out


def flow_accuracy(pred_flow: FlowField, gt: GroundTruthFlow, threshold: float = 5.0) -> float:
    """Fraction of mask pixels with endpoint error below the threshold,
    measured after rescaling so the larger dimension is 100 pixels (flow
    vectors scale with the per-axis resize factors)."""
    if pred_flow.flow.shape != gt.flow.shape:
        raise ValueError("prediction and ground truth must share a resolution")
    if not gt.mask.any():
        raise ValueError("empty foreground mask")
    h, w = gt.mask.shape
    scale = 100.0 / max(h, w)
    new_h = max(1, int(round(h * scale)))
    new_w = max(1, int(round(w * scale)))
    pred = _rescale_flow(pred_flow.flow, new_h, new_w)
    truth = _rescale_flow(gt.flow, new_h, new_w)
    mask = (
        ops.bilinear_resample(gt.mask[None].astype(np.float64), new_h, new_w)[0] >= 0.5
    )
    if not mask.any():
        raise ValueError("foreground mask vanished under rescaling")
    err = np.hypot(pred[0] - truth[0], pred[1] - truth[1])
    return float((err[mask] < threshold).mean())


@dataclass(frozen=True)
class WarpParams:
    """Bounds for the random synthetic warp (similarity + smooth wave)."""

    max_scale: float = 0.10
    max_rotation_deg: float = 10.0
    max_translation: float = 5.0
    wave_amplitude: float = 3.0
    min_wave_period: float = 32.0
    keypoint_stride: int = 8


def _forward_map(xs, ys, sim, wave):
    """Warp T(p) = similarity(p) + wave(p), vectorized over coordinate arrays."""
    scale, cos_t, sin_t, tx, ty, cx, cy = sim
    rx = xs - cx
    ry = ys - cy
    wx = scale * (cos_t * rx - sin_t * ry) + cx + tx
    wy = scale * (sin_t * rx + cos_t * ry) + cy + ty
    ax, px, phx, ay, py, phy = wave
    wx = wx + ax * np.sin(2.0 * np.pi * (ys / px + phx))
    wy = wy + ay * np.sin(2.0 * np.pi * (xs / py + phy))
    return wx, wy


def _invert_map(xs, ys, sim, wave, steps: int = 30):
    # fixed-point inversion; contraction holds at the configured bounds
    px, py = xs.astype(np.float64).copy(), ys.astype(np.float64).copy()
    for _ in range(steps):
        fx, fy = _forward_map(px, py, sim, wave)
        px += xs - fx
        py += ys - fy
    return px, py


def synth_pair(
    image: np.ndarray, warp_params: WarpParams | None = None, seed: int = 0
) -> tuple[ImagePairSample, GroundTruthFlow, tuple[KeypointSet, KeypointSet]]:
    """Warp an image into a synthetic training/evaluation pair.

    Returns the pair with bboxes, the exact dense ground-truth flow (masked
    to the source bbox), and a matched keypoint grid. The target image is
    the source resampled through the inverted warp with replicate borders.
    """
    wp = warp_params or WarpParams()
    rng = np.random.default_rng(seed)
    _, h, w = image.shape
    scale = 1.0 + rng.uniform(-wp.max_scale, wp.max_scale)
    if scale <= 0.5:
        raise ValueError("degenerate similarity: non-positive scale")
    theta = np.deg2rad(rng.uniform(-wp.max_rotation_deg, wp.max_rotation_deg))
    sim = (
        scale,
        np.cos(theta),
        np.sin(theta),
        rng.uniform(-wp.max_translation, wp.max_translation),
        rng.uniform(-wp.max_translation, wp.max_translation),
        (w - 1) / 2.0,
        (h - 1) / 2.0,
    )
    wave = (
        rng.uniform(-wp.wave_amplitude, wp.wave_amplitude),
        rng.uniform(wp.min_wave_period, 2 * wp.min_wave_period),
        rng.uniform(0.0, 1.0),
        rng.uniform(-wp.wave_amplitude, wp.wave_amplitude),
        rng.uniform(wp.min_wave_period, 2 * wp.min_wave_period),
        rng.uniform(0.0, 1.0),
    )

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    tx, ty = _forward_map(xs, ys, sim, wave)
    flow = np.stack([tx - xs, ty - ys], axis=0)

    inv_x, inv_y = _invert_map(xs, ys, sim, wave)
    target = ops.bilinear_sample_at(image, inv_y, inv_x)

    margin = int(np.ceil(np.abs(flow).max())) + 1
    if 2 * margin >= min(h, w) - 2:
        raise ValueError("warp too large for this image size")
    bbox_src = Bbox(margin, margin, w - 2 * margin, h - 2 * margin)
    in_y, in_x = bbox_src.pixel_grid()
    lo_x = int(np.floor((in_x + flow[0, in_y, in_x]).min()))
    hi_x = int(np.ceil((in_x + flow[0, in_y, in_x]).max()))
    lo_y = int(np.floor((in_y + flow[1, in_y, in_x]).min()))
    hi_y = int(np.ceil((in_y + flow[1, in_y, in_x]).max()))
    lo_x, lo_y = max(lo_x, 0), max(lo_y, 0)
    hi_x, hi_y = min(hi_x, w - 1), min(hi_y, h - 1)
    bbox_tgt = Bbox(lo_x, lo_y, hi_x - lo_x + 1, hi_y - lo_y + 1)

    mask = np.zeros((h, w), dtype=bool)
    mask[bbox_src.y : bbox_src.y + bbox_src.h, bbox_src.x : bbox_src.x + bbox_src.w] = True
    gt = GroundTruthFlow(flow, mask)

    step = wp.keypoint_stride
    kys, kxs = np.mgrid[
        bbox_src.y : bbox_src.y + bbox_src.h : step,
        bbox_src.x : bbox_src.x + bbox_src.w : step,
    ]
    kys, kxs = kys.ravel().astype(np.float64), kxs.ravel().astype(np.float64)
    wx, wy = _forward_map(kxs, kys, sim, wave)
    keep = bbox_tgt.contains(wy, wx)
    src_kp = KeypointSet(np.stack([kxs[keep], kys[keep]], axis=1), bbox_src)
    tgt_kp = KeypointSet(np.stack([wx[keep], wy[keep]], axis=1), bbox_tgt)

    pair = ImagePairSample(image, target, bbox_src, bbox_tgt)
    return pair, gt, (src_kp, tgt_kp)


def random_patterned_image(
    shape: tuple[int, int, int] = (3, 64, 64),
    seed: int = 0,
    period: float = 9.0,
    num_gratings: int = 3,
) -> np.ndarray:
    """Quasi-periodic texture in [0, 1]: oriented gratings under low-frequency
    amplitude modulation. Repetition makes naive matching alias between
    cells while the modulation keeps ground-truth correspondence well posed,
    so these make informative training/evaluation pairs."""
    rng = np.random.default_rng(seed)
    c, h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    gratings = []
    mods = []
    for _ in range(num_gratings):
        theta = rng.uniform(0.0, np.pi)
        p = period * rng.uniform(0.8, 1.25)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        gratings.append(
            np.sin(2.0 * np.pi * (np.cos(theta) * xs + np.sin(theta) * ys) / p + phase)
        )
        fx, fy = rng.uniform(0.5, 2.0) / w, rng.uniform(0.5, 2.0) / h
        mods.append(
            0.65 + 0.35 * np.sin(2.0 * np.pi * (fx * xs + fy * ys) + rng.uniform(0.0, 2.0 * np.pi))
        )
    img = np.zeros(shape)
    for ch in range(c):
        acc = np.zeros((h, w))
        for g, m in zip(gratings, mods):
            acc += rng.uniform(0.2, 1.0) * g * m
        lo, hi = acc.min(), acc.max()
        img[ch] = (acc - lo) / (hi - lo + 1e-12)
    return img


def random_smooth_image(
    shape: tuple[int, int, int] = (3, 64, 64),
    seed: int = 0,
    components: int = 8,
    max_cycles: float = 6.0,
) -> np.ndarray:
    """Random band-limited texture in [0, 1]: a sum of sinusoids with up to
    max_cycles periods across the image (keep it low for warp round trips)."""
    rng = np.random.default_rng(seed)
    c, h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros(shape)
    for ch in range(c):
        acc = np.zeros((h, w))
        for _ in range(components):
            fx = rng.uniform(0.5, max_cycles) / w
            fy = rng.uniform(0.5, max_cycles) / h
            phase = rng.uniform(0.0, 2.0 * np.pi)
            acc += rng.uniform(0.3, 1.0) * np.sin(
                2.0 * np.pi * (fx * xs + fy * ys) + phase
            )
        lo, hi = acc.min(), acc.max()
        img[ch] = (acc - lo) / (hi - lo + 1e-12)
    return img
