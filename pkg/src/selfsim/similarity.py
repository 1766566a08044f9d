"""Self-similarity responses on feature maps with learnable sampling offsets.

Each sampling pattern pairs two 2-D offsets (s, t). The layer shifts the
activation map by each offset, takes the squared channel difference, and
reduces over channels, giving one dissimilarity map per pattern. A slow
per-patch reference implementation (crop both receptive fields, run the
conv stack on each crop independently, compare center activations) is kept
as the correctness oracle and as the speed baseline for the single-pass
formulation.

Two shift modes exist: "continuous-bilinear" interpolates at real-valued
offsets and is exactly differentiable; "integer-nearest" rounds offsets to
whole pixels and falls back to a spatial-derivative surrogate for the
offset gradients.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import ops
from .model import SHIFT_BILINEAR, SHIFT_MODES, SHIFT_NEAREST
from .ops import ConvLayerParams


def _check_mode(mode: str) -> None:
    if mode not in SHIFT_MODES:
        raise ValueError(f"unknown shift mode {mode!r}, expected one of {SHIFT_MODES}")


def _axis_shift(n: int, offset: float):
    """Index pairs, interpolation weights, and the derivative mask for
    sampling coordinate i - offset along one axis, clamped to [0, n-1]."""
    src = np.arange(n, dtype=np.float64) - offset
    clamped = np.clip(src, 0.0, n - 1.0)
    i0 = np.minimum(np.floor(clamped).astype(np.intp), n - 1)
    i1 = np.minimum(i0 + 1, n - 1)
    f = clamped - i0
    inside = (src > 0.0) & (src < n - 1.0)
    return i0, i1, f, inside


def shift_transform(act: np.ndarray, offset, mode: str = SHIFT_BILINEAR) -> np.ndarray:
    """Translate an activation map so that output(y, x) = act(y - oy, x - ox).

    Out-of-range source coordinates clamp to the border. offset is (ox, oy)
    in feature-map pixels.
    """
    _check_mode(mode)
    ox, oy = float(offset[0]), float(offset[1])
    _, h, w = act.shape
    if mode == SHIFT_NEAREST:
        iy = np.clip(np.arange(h) - int(np.rint(oy)), 0, h - 1)
        ix = np.clip(np.arange(w) - int(np.rint(ox)), 0, w - 1)
        return act[:, iy[:, None], ix[None, :]]
    y0, y1, fy, _ = _axis_shift(h, oy)
    x0, x1, fx, _ = _axis_shift(w, ox)
    ay = act[:, y0, :] * (1.0 - fy)[None, :, None] + act[:, y1, :] * fy[None, :, None]
    return ay[:, :, x0] * (1.0 - fx) + ay[:, :, x1] * fx


def _shift_adjoint_act(grad: np.ndarray, h: int, w: int, ys, xs) -> np.ndarray:
    """Scatter grad through the bilinear gather defined by per-axis indices."""
    y0, y1, fy, _ = ys
    x0, x1, fx, _ = xs
    c = grad.shape[0]
    gx = np.zeros((c, grad.shape[1], w), dtype=grad.dtype)
    np.add.at(gx, (slice(None), slice(None), x0), grad * (1.0 - fx))
    np.add.at(gx, (slice(None), slice(None), x1), grad * fx)
    out = np.zeros((c, h, w), dtype=grad.dtype)
    np.add.at(out, (slice(None), y0, slice(None)), gx * (1.0 - fy)[None, :, None])
    np.add.at(out, (slice(None), y1, slice(None)), gx * fy[None, :, None])
    return out


def self_dissimilarity(
    act: np.ndarray,
    offsets_s: np.ndarray,
    offsets_t: np.ndarray,
    mode: str = SHIFT_BILINEAR,
) -> np.ndarray:
    """Per-pattern self-dissimilarity: out(l, i) = sum_c (A_s(i) - A_t(i))^2
    where A_s, A_t are the activation shifted by the l-th offset pair.

    Runs the activation map once per stream instead of once per patch pair.
    """
    _check_mode(mode)
    num = offsets_s.shape[0]
    _, h, w = act.shape
    out = np.empty((num, h, w), dtype=act.dtype)
    for l in range(num):
        d = shift_transform(act, offsets_s[l], mode) - shift_transform(act, offsets_t[l], mode)
        out[l] = np.einsum("chw,chw->hw", d, d)
    return out


def self_dissimilarity_backward(
    act: np.ndarray,
    offsets_s: np.ndarray,
    offsets_t: np.ndarray,
    grad_out: np.ndarray,
    mode: str = SHIFT_BILINEAR,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Adjoints of self_dissimilarity: (grad_act, grad_offsets_s, grad_offsets_t).

    In continuous-bilinear mode the offset gradients are the exact adjoints
    of the interpolating sampler. In integer-nearest mode the forward is
    piecewise constant in the offsets, so the offset gradients use the
    central-difference spatial derivative of the shifted map instead (a
    smooth surrogate; activation gradients stay exact).
    """
    _check_mode(mode)
    num, h, w = grad_out.shape
    if act.shape[1:] != (h, w) or offsets_s.shape[0] != num:
        raise ValueError("grad_out shape does not match self_dissimilarity output")
    grad_act = np.zeros_like(act)
    grad_s = np.zeros_like(offsets_s)
    grad_t = np.zeros_like(offsets_t)
    for l in range(num):
        shifted_s = shift_transform(act, offsets_s[l], mode)
        shifted_t = shift_transform(act, offsets_t[l], mode)
        g2 = 2.0 * grad_out[l][None, :, :] * (shifted_s - shifted_t)
        for offsets, grads, upstream, shifted in (
            (offsets_s, grad_s, g2, shifted_s),
            (offsets_t, grad_t, -g2, shifted_t),
        ):
            ox, oy = float(offsets[l, 0]), float(offsets[l, 1])
            if mode == SHIFT_NEAREST:
                iy = np.clip(np.arange(h) - int(np.rint(oy)), 0, h - 1)
                ix = np.clip(np.arange(w) - int(np.rint(ox)), 0, w - 1)
                np.add.at(
                    grad_act, (slice(None), iy[:, None], ix[None, :]), upstream
                )
                dx, dy = ops.spatial_gradient(shifted)
                grads[l, 0] += -(upstream * dx).sum()
                grads[l, 1] += -(upstream * dy).sum()
            else:
                ys = _axis_shift(h, oy)
                xs = _axis_shift(w, ox)
                grad_act += _shift_adjoint_act(upstream, h, w, ys, xs)
                y0, y1, fy, in_y = ys
                x0, x1, fx, in_x = xs
                # d out / d ox = -(difference of the y-interpolated map at the
                # two x knots); clamped coordinates contribute nothing.
                ay = (
                    act[:, y0, :] * (1.0 - fy)[None, :, None]
                    + act[:, y1, :] * fy[None, :, None]
                )
                ddx = (ay[:, :, x1] - ay[:, :, x0]) * in_x[None, None, :]
                grads[l, 0] += -(upstream * ddx).sum()
                ax = act[:, :, x0] * (1.0 - fx) + act[:, :, x1] * fx
                ddy = (ax[:, y1, :] - ax[:, y0, :]) * in_y[None, :, None]
                grads[l, 1] += -(upstream * ddy).sum()
    return grad_act, grad_s, grad_t


def run_conv_stack(
    x: np.ndarray, layers: list[ConvLayerParams], apply_relu: bool = True
) -> np.ndarray:
    """Replicate-padded conv stack over a full map, ReLU after each layer."""
    a = x
    for p in layers:
        a = ops.conv2d(a, p)
        if apply_relu:
            a = ops.relu(a)
    return a


def stack_receptive_radius(layers: list[ConvLayerParams]) -> tuple[int, int]:
    ry = sum(p.weights.shape[2] // 2 for p in layers)
    rx = sum(p.weights.shape[3] // 2 for p in layers)
    return ry, rx


def _valid_conv(a: np.ndarray, p: ConvLayerParams) -> np.ndarray:
    kh, kw = p.weights.shape[2:]
    win = sliding_window_view(a, (kh, kw), axis=(1, 2))
    return np.einsum("ihwkl,oikl->ohw", win, p.weights) + p.bias[:, None, None]


def _patch_center_activation(
    crop: np.ndarray, layers: list[ConvLayerParams], apply_relu: bool
) -> np.ndarray:
    a = crop
    for p in layers:
        a = _valid_conv(a, p)
        if apply_relu:
            a = np.maximum(a, 0.0)
    return a[:, a.shape[1] // 2, a.shape[2] // 2]


def self_dissimilarity_reference(
    image: np.ndarray,
    offsets_s: np.ndarray,
    offsets_t: np.ndarray,
    layers: list[ConvLayerParams],
    apply_relu: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Straightforward per-patch self-similarity, the oracle for self_dissimilarity.

    For every pixel and pattern, crops the two shifted receptive fields,
    runs the conv stack on each crop independently, and takes the squared
    L2 distance of the two center activations. Only interior pixels, where
    both crops fit inside the image, are computed; everything else is NaN.
    Offsets are rounded to whole pixels. Returns (values, interior_mask).
    """
    _, h, w = image.shape
    off_s = np.rint(offsets_s).astype(int)
    off_t = np.rint(offsets_t).astype(int)
    ry, rx = stack_receptive_radius(layers)
    all_off = np.concatenate([off_s, off_t], axis=0)
    my = ry + int(np.abs(all_off[:, 1]).max(initial=0))
    mx = rx + int(np.abs(all_off[:, 0]).max(initial=0))
    num = off_s.shape[0]
    values = np.full((num, h, w), np.nan)
    interior = np.zeros((h, w), dtype=bool)
    if h - 2 * my <= 0 or w - 2 * mx <= 0:
        return values, interior
    interior[my : h - my, mx : w - mx] = True
    for l in range(num):
        sx, sy = off_s[l]
        tx, ty = off_t[l]
        for y in range(my, h - my):
            for x in range(mx, w - mx):
                cs = image[:, y - sy - ry : y - sy + ry + 1, x - sx - rx : x - sx + rx + 1]
                ct = image[:, y - ty - ry : y - ty + ry + 1, x - tx - rx : x - tx + rx + 1]
                fs = _patch_center_activation(cs, layers, apply_relu)
                ft = _patch_center_activation(ct, layers, apply_relu)
                d = fs - ft
                values[l, y, x] = float(d @ d)
    return values, interior


def gate_and_pool(dissim: np.ndarray, bandwidth: float, pool_radius: int) -> np.ndarray:
    """exp(-S / bandwidth), then max over the (2r+1)^2 window around each
    pixel; windows crop at the borders. Output values lie in (0, 1]."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    gated = np.exp(-dissim / bandwidth)
    if pool_radius == 0:
        return gated
    r = pool_radius
    gp = np.pad(gated, ((0, 0), (r, r), (r, r)), constant_values=-np.inf)
    win = sliding_window_view(gp, (2 * r + 1, 2 * r + 1), axis=(1, 2))
    return win.max(axis=(3, 4))


def gate_and_pool_backward(
    dissim: np.ndarray, bandwidth: float, pool_radius: int, grad_out: np.ndarray
) -> tuple[np.ndarray, float]:
    """Adjoint of gate_and_pool: (grad_dissim, grad_bandwidth).

    Each window routes its gradient to the argmax element, first in
    row-major scan order on ties.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    gated = np.exp(-dissim / bandwidth)
    if pool_radius == 0:
        grad_gated = grad_out
    else:
        r = pool_radius
        num, h, w = dissim.shape
        gp = np.pad(gated, ((0, 0), (r, r), (r, r)), constant_values=-np.inf)
        k = 2 * r + 1
        win = sliding_window_view(gp, (k, k), axis=(1, 2)).reshape(num, h, w, k * k)
        flat = win.argmax(axis=3)
        src_y = np.arange(h)[None, :, None] + flat // k - r
        src_x = np.arange(w)[None, None, :] + flat % k - r
        ll = np.arange(num)[:, None, None]
        grad_gated = np.zeros_like(gated)
        np.add.at(
            grad_gated,
            (np.broadcast_to(ll, flat.shape), src_y, src_x),
            grad_out,
        )
    grad_dissim = grad_gated * (-gated / bandwidth)
    grad_bandwidth = float((grad_gated * gated * dissim).sum() / bandwidth**2)
    return grad_dissim, grad_bandwidth
