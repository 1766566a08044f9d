"""Model configuration and learnable parameters.

The model couples a small convolutional backbone with one set of learned
sampling patterns per pyramid level: paired 2-D offsets that select which
two feature-map locations each descriptor channel compares, plus a
positive gating bandwidth kept in log-space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ops import ConvLayerParams

SHIFT_BILINEAR = "continuous-bilinear"
SHIFT_NEAREST = "integer-nearest"
SHIFT_MODES = (SHIFT_BILINEAR, SHIFT_NEAREST)


@dataclass(frozen=True)
class StagePlan:
    """One backbone stage: `layers` convs of `channels` x kernel^2, with a
    1x or 2x downsample applied at stage entry."""

    layers: int
    channels: int
    kernel: int = 3
    downsample: int = 2

    def __post_init__(self) -> None:
        if self.downsample not in (1, 2):
            raise ValueError("stage downsample must be 1 or 2")
        if self.layers < 1 or self.channels < 1:
            raise ValueError("stage needs at least one layer and one channel")
        if self.kernel % 2 == 0:
            raise ValueError("stage kernel must be odd")


DEFAULT_STAGES = (
    StagePlan(layers=2, channels=16, kernel=3, downsample=2),
    StagePlan(layers=2, channels=32, kernel=3, downsample=2),
    StagePlan(layers=2, channels=32, kernel=3, downsample=1),
)


@dataclass(frozen=True)
class BackboneConfig:
    stages: tuple[StagePlan, ...] = DEFAULT_STAGES
    in_channels: int = 3

    def __post_init__(self) -> None:
        if len(self.stages) < 1:
            raise ValueError("backbone needs at least one stage")

    @property
    def num_levels(self) -> int:
        return len(self.stages)

    @property
    def strides(self) -> tuple[int, ...]:
        out = []
        s = 1
        for stage in self.stages:
            s *= stage.downsample
            out.append(s)
        return tuple(out)


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    patterns_per_level: tuple[int, ...] = (64, 64, 64)
    pool_radius: int = 1
    pattern_radius: float = 4.0
    shift_mode: str = SHIFT_BILINEAR
    # Initial gating bandwidth. Taps are unit-normalized, so raw
    # self-similarity values concentrate well below 1; the init must sit at
    # that scale or the gated responses all saturate near 1 and the
    # contrastive margin never engages.
    bandwidth_init: float = 0.05

    def __post_init__(self) -> None:
        if len(self.patterns_per_level) != self.backbone.num_levels:
            raise ValueError(
                "patterns_per_level must provide one count per backbone stage"
            )
        if any(n < 1 for n in self.patterns_per_level):
            raise ValueError("each level needs at least one sampling pattern")
        if self.pool_radius < 0:
            raise ValueError("pool_radius must be >= 0")
        if self.pattern_radius < 1.0:
            raise ValueError("pattern_radius must be >= 1")
        if self.shift_mode not in SHIFT_MODES:
            raise ValueError(f"shift_mode must be one of {SHIFT_MODES}")
        if self.bandwidth_init <= 0:
            raise ValueError("bandwidth_init must be positive")

    @property
    def num_levels(self) -> int:
        return self.backbone.num_levels

    @property
    def descriptor_dim(self) -> int:
        return sum(self.patterns_per_level)


@dataclass
class LevelPatterns:
    """Sampling patterns of one level: paired offsets (x, y) in feature-map
    pixels and the gating bandwidth, learned as log(bandwidth)."""

    offsets_s: np.ndarray
    offsets_t: np.ndarray
    log_bandwidth: float

    def __post_init__(self) -> None:
        self.offsets_s = np.asarray(self.offsets_s, dtype=np.float64)
        self.offsets_t = np.asarray(self.offsets_t, dtype=np.float64)
        if self.offsets_s.shape != self.offsets_t.shape or self.offsets_s.ndim != 2:
            raise ValueError("offset arrays must share shape (num_patterns, 2)")
        if self.offsets_s.shape[1] != 2:
            raise ValueError("offsets are 2-D (x, y) vectors")

    @property
    def num_patterns(self) -> int:
        return self.offsets_s.shape[0]

    @property
    def bandwidth(self) -> float:
        return math.exp(self.log_bandwidth)


@dataclass
class ModelParams:
    config: ModelConfig
    backbone: list[list[ConvLayerParams]]
    patterns: list[LevelPatterns]


def init_conv_layer(in_c: int, out_c: int, kernel: int, rng: np.random.Generator) -> ConvLayerParams:
    fan_in = in_c * kernel * kernel
    fan_out = out_c * kernel * kernel
    a = math.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-a, a, size=(out_c, in_c, kernel, kernel))
    return ConvLayerParams(w, np.zeros(out_c))


def _offsets_in_disk(n: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, size=n))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


def init_model(config: ModelConfig | None = None, seed: int = 0) -> ModelParams:
    """Seeded initialization: Glorot-uniform conv weights, sampling offsets
    uniform in the disk of the configured radius, bandwidth from config."""
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    backbone = []
    in_c = config.backbone.in_channels
    for stage in config.backbone.stages:
        layers = []
        for _ in range(stage.layers):
            layers.append(init_conv_layer(in_c, stage.channels, stage.kernel, rng))
            in_c = stage.channels
        backbone.append(layers)
    patterns = [
        LevelPatterns(
            offsets_s=_offsets_in_disk(n, config.pattern_radius, rng),
            offsets_t=_offsets_in_disk(n, config.pattern_radius, rng),
            log_bandwidth=math.log(config.bandwidth_init),
        )
        for n in config.patterns_per_level
    ]
    return ModelParams(config=config, backbone=backbone, patterns=patterns)


def clamp_offsets(params: ModelParams) -> None:
    """Rescale any offset vector whose norm exceeds the pattern radius back
    onto the radius; vectors already inside are untouched bit-for-bit."""
    radius = params.config.pattern_radius
    for lp in params.patterns:
        for arr in (lp.offsets_s, lp.offsets_t):
            norms = np.hypot(arr[:, 0], arr[:, 1])
            over = norms > radius
            if np.any(over):
                arr[over] *= (radius / norms[over])[:, None]
