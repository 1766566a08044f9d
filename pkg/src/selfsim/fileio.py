"""Binary file formats and image/text IO.

All binary formats are little-endian and round-trip bit-exactly:

  tensor  "FCST": version u32, dtype tag u32, rank u32, dims u32*, raw data
  pyramid          level count u32, then per level: stride u32 + tensor blob
  flow    "FCFL": version u32, dtype tag u32, H u32, W u32, dx plane,
                  dy plane, validity bitmap (row-major, packed bits)
  model   "FCSS": version u32, config echo, conv layers, sampling patterns

Images: 8-bit PNG (via Pillow) and ASCII PPM/PGM, converted to [0, 1].
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .model import (
    BackboneConfig,
    LevelPatterns,
    ModelConfig,
    ModelParams,
    SHIFT_MODES,
    StagePlan,
)
from .ops import ConvLayerParams

TENSOR_MAGIC = b"FCST"
FLOW_MAGIC = b"FCFL"
MODEL_MAGIC = b"FCSS"
FORMAT_VERSION = 1

_DTYPE_TAGS = {1: "<f4", 2: "<f8", 3: "u1"}
_TAG_FOR_KIND = {("f", 4): 1, ("f", 8): 2, ("u", 1): 3}


class FormatError(ValueError):
    """Raised when a file does not parse as the expected format."""


def _u32(value: int) -> bytes:
    return struct.pack("<I", value)


def _read(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError("unexpected end of file")
    return data


def _read_u32(fh) -> int:
    return struct.unpack("<I", _read(fh, 4))[0]


def _open(path_or_file, mode: str):
    if hasattr(path_or_file, "read") or hasattr(path_or_file, "write"):
        return path_or_file, False
    return open(path_or_file, mode), True


def write_tensor(fh, arr: np.ndarray) -> None:
    kind = (arr.dtype.kind, arr.dtype.itemsize)
    if kind not in _TAG_FOR_KIND:
        raise ValueError(f"unsupported tensor dtype {arr.dtype}")
    tag = _TAG_FOR_KIND[kind]
    fh.write(TENSOR_MAGIC)
    fh.write(_u32(FORMAT_VERSION))
    fh.write(_u32(tag))
    fh.write(_u32(arr.ndim))
    for d in arr.shape:
        fh.write(_u32(d))
    fh.write(np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[tag]).tobytes())


def read_tensor(fh) -> np.ndarray:
    magic = _read(fh, 4)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {TENSOR_MAGIC!r}")
    version = _read_u32(fh)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported tensor format version {version}")
    tag = _read_u32(fh)
    if tag not in _DTYPE_TAGS:
        raise FormatError(f"unknown dtype tag {tag}")
    rank = _read_u32(fh)
    dims = tuple(_read_u32(fh) for _ in range(rank))
    dtype = np.dtype(_DTYPE_TAGS[tag])
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    data = _read(fh, count * dtype.itemsize)
    return np.frombuffer(data, dtype=dtype).reshape(dims).copy()


def save_tensor(path, arr: np.ndarray) -> None:
    fh, close = _open(path, "wb")
    try:
        write_tensor(fh, arr)
    finally:
        if close:
            fh.close()


def load_tensor(path) -> np.ndarray:
    fh, close = _open(path, "rb")
    try:
        return read_tensor(fh)
    finally:
        if close:
            fh.close()


def save_pyramid(path, pyramid) -> None:
    fh, close = _open(path, "wb")
    try:
        fh.write(_u32(pyramid.num_levels))
        for act, stride in zip(pyramid.activations, pyramid.strides):
            fh.write(_u32(stride))
            write_tensor(fh, act)
    finally:
        if close:
            fh.close()


def load_pyramid(path):
    from .backbone import FeaturePyramid

    fh, close = _open(path, "rb")
    try:
        count = _read_u32(fh)
        if count < 1:
            raise FormatError("pyramid file declares no levels")
        activations, strides = [], []
        for _ in range(count):
            strides.append(_read_u32(fh))
            activations.append(read_tensor(fh))
        try:
            return FeaturePyramid(activations, strides)
        except ValueError as exc:
            raise FormatError(str(exc)) from exc
    finally:
        if close:
            fh.close()


def save_flow(path, flow_field) -> None:
    flow = flow_field.flow
    valid = flow_field.valid
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ValueError("flow must have shape (2, H, W)")
    kind = (flow.dtype.kind, flow.dtype.itemsize)
    if kind not in _TAG_FOR_KIND:
        raise ValueError(f"unsupported flow dtype {flow.dtype}")
    tag = _TAG_FOR_KIND[kind]
    fh, close = _open(path, "wb")
    try:
        fh.write(FLOW_MAGIC)
        fh.write(_u32(FORMAT_VERSION))
        fh.write(_u32(tag))
        fh.write(_u32(flow.shape[1]))
        fh.write(_u32(flow.shape[2]))
        fh.write(np.ascontiguousarray(flow[0], dtype=_DTYPE_TAGS[tag]).tobytes())
        fh.write(np.ascontiguousarray(flow[1], dtype=_DTYPE_TAGS[tag]).tobytes())
        fh.write(np.packbits(valid.astype(np.uint8).ravel()).tobytes())
    finally:
        if close:
            fh.close()


def load_flow(path):
    from .matching import FlowField

    fh, close = _open(path, "rb")
    try:
        magic = _read(fh, 4)
        if magic != FLOW_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {FLOW_MAGIC!r}")
        version = _read_u32(fh)
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported flow format version {version}")
        tag = _read_u32(fh)
        if tag not in _DTYPE_TAGS:
            raise FormatError(f"unknown dtype tag {tag}")
        h = _read_u32(fh)
        w = _read_u32(fh)
        dtype = np.dtype(_DTYPE_TAGS[tag])
        planes = []
        for _ in range(2):
            data = _read(fh, h * w * dtype.itemsize)
            planes.append(np.frombuffer(data, dtype=dtype).reshape(h, w).copy())
        nbytes = -(-(h * w) // 8)
        bits = np.unpackbits(np.frombuffer(_read(fh, nbytes), dtype=np.uint8))
        valid = bits[: h * w].reshape(h, w).astype(bool)
        return FlowField(np.stack(planes, axis=0), valid)
    finally:
        if close:
            fh.close()


_SHIFT_MODE_CODE = {mode: i for i, mode in enumerate(SHIFT_MODES)}


def save_model(path, params: ModelParams) -> None:
    cfg = params.config
    fh, close = _open(path, "wb")
    try:
        fh.write(MODEL_MAGIC)
        fh.write(_u32(FORMAT_VERSION))
        fh.write(_u32(cfg.num_levels))
        for n in cfg.patterns_per_level:
            fh.write(_u32(n))
        fh.write(_u32(cfg.pool_radius))
        fh.write(struct.pack("<d", cfg.pattern_radius))
        fh.write(struct.pack("<d", cfg.bandwidth_init))
        fh.write(struct.pack("<B", _SHIFT_MODE_CODE[cfg.shift_mode]))
        fh.write(_u32(cfg.backbone.in_channels))
        fh.write(_u32(len(cfg.backbone.stages)))
        for stage in cfg.backbone.stages:
            fh.write(_u32(stage.layers))
            fh.write(_u32(stage.channels))
            fh.write(_u32(stage.kernel))
            fh.write(_u32(stage.downsample))
        for layers in params.backbone:
            for p in layers:
                fh.write(np.ascontiguousarray(p.weights, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(p.bias, dtype="<f8").tobytes())
        for lp in params.patterns:
            fh.write(np.ascontiguousarray(lp.offsets_s, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(lp.offsets_t, dtype="<f8").tobytes())
            fh.write(struct.pack("<d", lp.log_bandwidth))
    finally:
        if close:
            fh.close()


def load_model(path) -> ModelParams:
    fh, close = _open(path, "rb")
    try:
        magic = _read(fh, 4)
        if magic != MODEL_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}")
        version = _read_u32(fh)
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported model format version {version}")
        num_levels = _read_u32(fh)
        patterns_per_level = tuple(_read_u32(fh) for _ in range(num_levels))
        pool_radius = _read_u32(fh)
        pattern_radius = struct.unpack("<d", _read(fh, 8))[0]
        bandwidth_init = struct.unpack("<d", _read(fh, 8))[0]
        mode_code = struct.unpack("<B", _read(fh, 1))[0]
        if mode_code >= len(SHIFT_MODES):
            raise FormatError(f"unknown shift mode code {mode_code}")
        in_channels = _read_u32(fh)
        num_stages = _read_u32(fh)
        stages = []
        for _ in range(num_stages):
            layers = _read_u32(fh)
            channels = _read_u32(fh)
            kernel = _read_u32(fh)
            downsample = _read_u32(fh)
            stages.append(StagePlan(layers, channels, kernel, downsample))
        try:
            config = ModelConfig(
                backbone=BackboneConfig(tuple(stages), in_channels),
                patterns_per_level=patterns_per_level,
                pool_radius=pool_radius,
                pattern_radius=pattern_radius,
                shift_mode=SHIFT_MODES[mode_code],
                bandwidth_init=bandwidth_init,
            )
        except ValueError as exc:
            raise FormatError(f"inconsistent model header: {exc}") from exc
        backbone = []
        in_c = in_channels
        for stage in stages:
            layers = []
            for _ in range(stage.layers):
                n = stage.channels * in_c * stage.kernel * stage.kernel
                w = np.frombuffer(_read(fh, 8 * n), dtype="<f8").reshape(
                    stage.channels, in_c, stage.kernel, stage.kernel
                )
                b = np.frombuffer(_read(fh, 8 * stage.channels), dtype="<f8")
                layers.append(ConvLayerParams(w.copy(), b.copy()))
                in_c = stage.channels
            backbone.append(layers)
        patterns = []
        for n in patterns_per_level:
            s = np.frombuffer(_read(fh, 16 * n), dtype="<f8").reshape(n, 2).copy()
            t = np.frombuffer(_read(fh, 16 * n), dtype="<f8").reshape(n, 2).copy()
            lb = struct.unpack("<d", _read(fh, 8))[0]
            patterns.append(LevelPatterns(s, t, lb))
        return ModelParams(config=config, backbone=backbone, patterns=patterns)
    finally:
        if close:
            fh.close()


def _parse_ascii_netpbm(text: str) -> np.ndarray:
    tokens = []
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if not tokens:
        raise FormatError("empty PPM/PGM file")
    magic = tokens[0]
    if magic not in ("P2", "P3"):
        raise FormatError(f"unsupported netpbm magic {magic!r} (ASCII P2/P3 only)")
    channels = 3 if magic == "P3" else 1
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        values = np.array([int(t) for t in tokens[4 : 4 + w * h * channels]], dtype=np.float64)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"malformed PPM/PGM data: {exc}") from exc
    if values.size != w * h * channels or maxval <= 0:
        raise FormatError("PPM/PGM pixel count does not match header")
    img = values.reshape(h, w, channels) / maxval
    return np.moveaxis(img, 2, 0)


def load_image(path, dtype=np.float64) -> np.ndarray:
    """Read a PNG or ASCII PPM/PGM image as (C, H, W) floats in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pgm"):
        return _parse_ascii_netpbm(path.read_text()).astype(dtype)
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=dtype) / 255.0
    except UnidentifiedImageError as exc:
        raise FormatError(f"cannot decode image {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[None, :, :]
    else:
        arr = np.moveaxis(arr, 2, 0)
    return arr


def save_image(path, arr: np.ndarray) -> None:
    """Write (C, H, W) floats in [0, 1] as an 8-bit PNG."""
    from PIL import Image

    data = np.clip(arr, 0.0, 1.0)
    data = (data * 255.0 + 0.5).astype(np.uint8)
    if data.shape[0] == 1:
        Image.fromarray(data[0], mode="L").save(path)
    else:
        Image.fromarray(np.moveaxis(data, 0, 2), mode="RGB").save(path)


def load_keypoints(path) -> np.ndarray:
    """Plain-text keypoints, one "x y" pair per line; returns (n, 2)."""
    pts = []
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"{path}:{i}: expected 'x y', got {line!r}")
        try:
            pts.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise FormatError(f"{path}:{i}: {exc}") from exc
    if not pts:
        raise FormatError(f"{path}: no keypoints")
    return np.array(pts, dtype=np.float64)


def save_keypoints(path, pts: np.ndarray) -> None:
    with open(path, "w") as fh:
        for x, y in np.asarray(pts):
            fh.write(f"{x} {y}\n")


def parse_manifest(path):
    """Training manifest: one pair per line, whitespace-separated fields
    `source target x,y,w,h x,y,w,h`; returns a list of parsed entries."""
    from .learning import Bbox

    entries = []
    base = Path(path).parent
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        parts = stripped.split()
        if len(parts) != 4:
            raise FormatError(
                f"{path}:{i}: expected 'source target x,y,w,h x,y,w,h', got {len(parts)} fields"
            )
        boxes = []
        for token in parts[2:]:
            nums = token.split(",")
            if len(nums) != 4:
                raise FormatError(f"{path}:{i}: bbox must be x,y,w,h, got {token!r}")
            try:
                boxes.append(Bbox(*(int(v) for v in nums)))
            except ValueError as exc:
                raise FormatError(f"{path}:{i}: {exc}") from exc
        src = base / parts[0] if not Path(parts[0]).is_absolute() else Path(parts[0])
        tgt = base / parts[1] if not Path(parts[1]).is_absolute() else Path(parts[1])
        entries.append((src, tgt, boxes[0], boxes[1]))
    if not entries:
        raise FormatError(f"{path}: manifest is empty")
    return entries
