"""Dense (channels, height, width) array kernels with exact adjoints.

Everything operates on plain numpy arrays in channel-major layout, stride 1,
with replicate (clamp-to-edge) padding at borders. Forward/backward pairs
live side by side; each backward is the exact adjoint of its forward, so
central finite differences agree to machine precision in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NORM_EPS = 1e-8


@dataclass
class ConvLayerParams:
    """One convolution layer: weights (out_c, in_c, kh, kw) and bias (out_c,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights)
        self.bias = np.asarray(self.bias)
        if self.weights.ndim != 4:
            raise ValueError("conv weights must have shape (out_c, in_c, kh, kw)")
        out_c, _, kh, kw = self.weights.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("kernel dims must be odd (centered kernels)")
        if self.bias.shape != (out_c,):
            raise ValueError(f"bias shape {self.bias.shape} does not match out_c={out_c}")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]


def replicate_pad(x: np.ndarray, top: int, bottom: int, left: int, right: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (top, bottom), (left, right)), mode="edge")


def replicate_pad_adjoint(g: np.ndarray, top: int, bottom: int, left: int, right: int) -> np.ndarray:
    """Fold gradients of replicated border pixels back onto their source pixels."""
    g = g.copy()
    if top:
        g[:, top, :] += g[:, :top, :].sum(axis=1)
    if bottom:
        g[:, -1 - bottom, :] += g[:, -bottom:, :].sum(axis=1)
    g = g[:, top:g.shape[1] - bottom, :]
    if left:
        g[:, :, left] += g[:, :, :left].sum(axis=2)
    if right:
        g[:, :, -1 - right] += g[:, :, -right:].sum(axis=2)
    return g[:, :, left:g.shape[2] - right]


def conv2d(x: np.ndarray, params: ConvLayerParams) -> np.ndarray:
    """Stride-1 2-D convolution (cross-correlation) with replicate padding.

    Output has shape (out_c, H, W) for input (in_c, H, W).
    """
    if x.shape[0] != params.in_channels:
        raise ValueError(
            f"input has {x.shape[0]} channels, layer expects {params.in_channels}"
        )
    kh, kw = params.weights.shape[2:]
    xp = replicate_pad(x, kh // 2, kh // 2, kw // 2, kw // 2)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    out = np.einsum("ihwkl,oikl->ohw", win, params.weights, optimize=True)
    return out + params.bias[:, None, None]


def conv2d_backward(
    x: np.ndarray, params: ConvLayerParams, grad_out: np.ndarray
) -> tuple[np.ndarray, ConvLayerParams]:
    """Exact adjoints of conv2d: returns (grad_input, grad_params)."""
    kh, kw = params.weights.shape[2:]
    if grad_out.shape != (params.out_channels, x.shape[1], x.shape[2]):
        raise ValueError(f"grad_out shape {grad_out.shape} does not match conv2d output")
    ph, pw = kh // 2, kw // 2
    xp = replicate_pad(x, ph, ph, pw, pw)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    grad_w = np.einsum("ihwkl,ohw->oikl", win, grad_out, optimize=True)
    grad_b = grad_out.sum(axis=(1, 2))
    # Full correlation with the flipped kernel gives the adjoint w.r.t. the
    # padded input; the pad adjoint then folds the margins back in.
    gp = np.pad(grad_out, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    gwin = sliding_window_view(gp, (kh, kw), axis=(1, 2))
    grad_xp = np.einsum(
        "ouvkl,oikl->iuv", gwin, params.weights[:, :, ::-1, ::-1], optimize=True
    )
    grad_x = replicate_pad_adjoint(grad_xp, ph, ph, pw, pw)
    return grad_x, ConvLayerParams(grad_w, grad_b)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return np.where(x > 0, grad_out, 0.0)


def _axis_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Align-corners sample positions; a 1-pixel output axis maps to coordinate 0.
    if n_out == 1:
        coords = np.zeros(1)
    else:
        coords = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.clip(np.floor(coords).astype(np.intp), 0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, coords - i0


def bilinear_resample(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resize; resizing to the input size is the identity."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be at least 1x1")
    _, h, w = x.shape
    if (out_h, out_w) == (h, w):
        return x.copy()
    y0, y1, fy = _axis_coords(h, out_h)
    x0, x1, fx = _axis_coords(w, out_w)
    fy = fy.astype(x.dtype, copy=False)
    fx = fx.astype(x.dtype, copy=False)
    ay = x[:, y0, :] * (1.0 - fy)[None, :, None] + x[:, y1, :] * fy[None, :, None]
    return ay[:, :, x0] * (1.0 - fx) + ay[:, :, x1] * fx


def bilinear_resample_backward(grad_out: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Adjoint of bilinear_resample, scattering grad_out back to (C, in_h, in_w)."""
    c, out_h, out_w = grad_out.shape
    if (out_h, out_w) == (in_h, in_w):
        return grad_out.copy()
    y0, y1, fy = _axis_coords(in_h, out_h)
    x0, x1, fx = _axis_coords(in_w, out_w)
    gx = np.zeros((c, out_h, in_w), dtype=grad_out.dtype)
    np.add.at(gx, (slice(None), slice(None), x0), grad_out * (1.0 - fx))
    np.add.at(gx, (slice(None), slice(None), x1), grad_out * fx)
    g = np.zeros((c, in_h, in_w), dtype=grad_out.dtype)
    np.add.at(g, (slice(None), y0, slice(None)), gx * (1.0 - fy)[None, :, None])
    np.add.at(g, (slice(None), y1, slice(None)), gx * fy[None, :, None])
    return g


def bilinear_sample_at(x: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample (C, H, W) at real coordinates with border clamp.

    ys and xs share an arbitrary shape S; the result has shape (C, *S).
    """
    _, h, w = x.shape
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    return (
        x[:, y0, x0] * (1.0 - fy) * (1.0 - fx)
        + x[:, y0, x1] * (1.0 - fy) * fx
        + x[:, y1, x0] * fy * (1.0 - fx)
        + x[:, y1, x1] * fy * fx
    )


def spatial_gradient(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-slice spatial derivatives (gx, gy).

    Central differences in the interior, one-sided at borders; a 1-pixel axis
    yields a zero gradient component.
    """
    _, h, w = x.shape
    gx = np.zeros_like(x)
    gy = np.zeros_like(x)
    if w >= 2:
        gx[:, :, 1:-1] = 0.5 * (x[:, :, 2:] - x[:, :, :-2])
        gx[:, :, 0] = x[:, :, 1] - x[:, :, 0]
        gx[:, :, -1] = x[:, :, -1] - x[:, :, -2]
    if h >= 2:
        gy[:, 1:-1, :] = 0.5 * (x[:, 2:, :] - x[:, :-2, :])
        gy[:, 0, :] = x[:, 1, :] - x[:, 0, :]
        gy[:, -1, :] = x[:, -1, :] - x[:, -2, :]
    return gx, gy


def channelwise_l2_normalize(x: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Divide each pixel's channel vector by sqrt(sum of squares + eps)."""
    s = np.sqrt((x * x).sum(axis=0, keepdims=True) + eps)
    return x / s


def channelwise_l2_normalize_backward(
    x: np.ndarray, grad_out: np.ndarray, eps: float = NORM_EPS
) -> np.ndarray:
    s2 = (x * x).sum(axis=0, keepdims=True) + eps
    s = np.sqrt(s2)
    dot = (grad_out * x).sum(axis=0, keepdims=True)
    return grad_out / s - x * (dot / (s2 * s))


def avgpool2(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling with replicate padding on odd axes; output ceil(H/2) x ceil(W/2)."""
    c, h, w = x.shape
    pb, pr = h % 2, w % 2
    xp = replicate_pad(x, 0, pb, 0, pr)
    return xp.reshape(c, (h + pb) // 2, 2, (w + pr) // 2, 2).mean(axis=(2, 4))


def avgpool2_backward(grad_out: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    g4 = np.repeat(np.repeat(grad_out, 2, axis=1), 2, axis=2) * 0.25
    return replicate_pad_adjoint(g4, 0, in_h % 2, 0, in_w % 2)
