"""Dense correspondence estimation from two descriptor fields.

Winner-take-all nearest-neighbor flow with an optional search bbox,
left-right consistency masking, and an iterative masked-median smoothing
pass that fills invalid pixels and snaps outliers to their neighborhood.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import ops
from .descriptor import DenseDescriptorField
from .knn import nearest_columns
from .learning import Bbox


@dataclass
class FlowField:
    """Per-pixel displacement (2, H, W) ordered (dx, dy), plus a validity mask."""

    flow: np.ndarray
    valid: np.ndarray

    def __post_init__(self) -> None:
        self.flow = np.asarray(self.flow, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.flow.ndim != 3 or self.flow.shape[0] != 2:
            raise ValueError("flow must have shape (2, H, W)")
        if self.valid.shape != self.flow.shape[1:]:
            raise ValueError("validity mask must match the flow resolution")

    @property
    def shape(self) -> tuple[int, int]:
        return self.flow.shape[1:]


def nn_flow(
    field_a: DenseDescriptorField,
    field_b: DenseDescriptorField,
    search_bbox: Bbox | None = None,
    source_bbox: Bbox | None = None,
    window_radius: int | None = None,
) -> FlowField:
    """Winner-take-all flow: each source pixel points at the target pixel
    with the nearest descriptor inside search_bbox (the whole image when
    None); ties break to row-major scan order. With source_bbox, pixels
    outside it are left at zero flow and marked invalid. window_radius
    additionally limits each pixel's search to a centered square window,
    trading completeness for speed."""
    if field_a.values.shape[1:] != field_b.values.shape[1:]:
        raise ValueError("fields must share a resolution")
    h, w = field_a.values.shape[1:]
    hb, wb = field_b.values.shape[1:]
    search = search_bbox or Bbox(0, 0, wb, hb)
    search.check_inside(hb, wb)
    src = source_bbox or Bbox(0, 0, w, h)
    src.check_inside(h, w)
    src_ys, src_xs = src.pixel_grid()
    flow = np.zeros((2, h, w))
    valid = np.zeros((h, w), dtype=bool)
    if window_radius is None:
        tgt_ys, tgt_xs = search.pixel_grid()
        queries = field_a.values[:, src_ys, src_xs]
        candidates = field_b.values[:, tgt_ys, tgt_xs]
        idx, _ = nearest_columns(queries, candidates)
        flow[0, src_ys, src_xs] = tgt_xs[idx] - src_xs
        flow[1, src_ys, src_xs] = tgt_ys[idx] - src_ys
        valid[src_ys, src_xs] = True
        return FlowField(flow, valid)
    if window_radius < 0:
        raise ValueError("window_radius must be nonnegative")
    x_lo, x_hi = search.x, search.x + search.w
    y_lo, y_hi = search.y, search.y + search.h
    for y, x in zip(src_ys, src_xs):
        wy_lo = max(y - window_radius, y_lo)
        wy_hi = min(y + window_radius + 1, y_hi)
        wx_lo = max(x - window_radius, x_lo)
        wx_hi = min(x + window_radius + 1, x_hi)
        if wy_lo >= wy_hi or wx_lo >= wx_hi:
            continue
        block = field_b.values[:, wy_lo:wy_hi, wx_lo:wx_hi]
        q = field_a.values[:, y, x]
        d2 = ((block - q[:, None, None]) ** 2).sum(axis=0)
        flat = int(d2.argmin())
        by, bx = divmod(flat, d2.shape[1])
        flow[0, y, x] = wx_lo + bx - x
        flow[1, y, x] = wy_lo + by - y
        valid[y, x] = True
    return FlowField(flow, valid)


def lr_consistency_mask(flow_ab: FlowField, flow_ba: FlowField, tau: float) -> np.ndarray:
    """True where following the forward flow and then the backward flow at
    the (rounded) landing point returns within tau pixels of the start."""
    if flow_ab.shape != flow_ba.shape:
        raise ValueError("flows must share a resolution")
    h, w = flow_ab.shape
    ys, xs = np.mgrid[0:h, 0:w]
    land_x = np.clip(np.rint(xs + flow_ab.flow[0]).astype(np.intp), 0, w - 1)
    land_y = np.clip(np.rint(ys + flow_ab.flow[1]).astype(np.intp), 0, h - 1)
    res_x = flow_ab.flow[0] + flow_ba.flow[0][land_y, land_x]
    res_y = flow_ab.flow[1] + flow_ba.flow[1][land_y, land_x]
    return np.hypot(res_x, res_y) <= tau


def _masked_median3x3(plane: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    work = np.where(valid, plane, np.nan)
    padded = np.pad(work, 1, constant_values=np.nan)
    win = sliding_window_view(padded, (3, 3)).reshape(plane.shape[0], plane.shape[1], 9)
    counts = (~np.isnan(win)).sum(axis=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=RuntimeWarning)  # all-NaN windows
        med = np.nanmedian(win, axis=2)
    return med, counts


def smooth_flow(
    flow_field: FlowField, iterations: int = 3, outlier_threshold: float = 2.0
) -> FlowField:
    """Replace invalid pixels and outliers by the componentwise median of
    their valid 3x3 neighbors; repaired pixels become valid for later
    iterations. iterations = 0 returns an identical copy."""
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")
    flow = flow_field.flow.copy()
    valid = flow_field.valid.copy()
    for _ in range(iterations):
        med_x, counts = _masked_median3x3(flow[0], valid)
        med_y, _ = _masked_median3x3(flow[1], valid)
        has_neighbors = counts > 0
        outlier = valid & (
            (np.abs(flow[0] - med_x) > outlier_threshold)
            | (np.abs(flow[1] - med_y) > outlier_threshold)
        )
        replace = (~valid | outlier) & has_neighbors
        if not replace.any():
            break
        flow[0][replace] = med_x[replace]
        flow[1][replace] = med_y[replace]
        valid = valid | replace
    return FlowField(flow, valid)


def warp_image(target_image: np.ndarray, flow_field: FlowField) -> np.ndarray:
    """Inverse warp: out(i) = target(i + flow(i)), bilinear with border clamp."""
    h, w = flow_field.shape
    if target_image.shape[1:] != (h, w):
        raise ValueError("target image resolution must match the flow")
    ys, xs = np.mgrid[0:h, 0:w]
    return ops.bilinear_sample_at(
        target_image, ys + flow_field.flow[1], xs + flow_field.flow[0]
    )


def _color_wheel() -> np.ndarray:
    # Middlebury-style hue wheel: 55 colors over the RY/YG/GC/CB/BM/MR arcs.
    ry, yg, gc, cb, bm, mr = 15, 6, 4, 11, 13, 6
    wheel = np.zeros((ry + yg + gc + cb + bm + mr, 3))
    col = 0
    for length, hold, ramp, down in (
        (ry, 0, 1, False),
        (yg, 1, 0, True),
        (gc, 1, 2, False),
        (cb, 2, 1, True),
        (bm, 2, 0, False),
        (mr, 0, 2, True),
    ):
        t = np.arange(length) / length
        wheel[col : col + length, hold] = 1.0
        wheel[col : col + length, ramp] = 1.0 - t if down else t
        col += length
    return wheel


def flow_to_color(flow_field: FlowField, max_magnitude: float | None = None) -> np.ndarray:
    """Color-coded flow visualization (hue = direction, saturation =
    magnitude); invalid pixels render black. Returns (3, H, W) in [0, 1]."""
    dx, dy = flow_field.flow[0], flow_field.flow[1]
    mag = np.hypot(dx, dy)
    if max_magnitude is None:
        max_magnitude = float(mag[flow_field.valid].max()) if flow_field.valid.any() else 1.0
    max_magnitude = max(max_magnitude, 1e-9)
    wheel = _color_wheel()
    n = len(wheel)
    angle = (np.arctan2(-dy, -dx) + np.pi) / (2.0 * np.pi)  # [0, 1)
    pos = angle * (n - 1)
    k0 = pos.astype(np.intp) % n
    k1 = (k0 + 1) % n
    f = pos - np.floor(pos)
    col = wheel[k0] * (1.0 - f[..., None]) + wheel[k1] * f[..., None]
    rel = np.clip(mag / max_magnitude, 0.0, 1.0)[..., None]
    col = 1.0 - rel * (1.0 - col)
    col[~flow_field.valid] = 0.0
    return np.moveaxis(col, 2, 0)
