"""Weakly-supervised training.

No ground-truth correspondences are needed: for each image pair, source
pixels are matched into the target bbox and back by exact nearest-descriptor
search; round trips that return close to the start become positive pairs,
failed round trips become (hard) negative pairs. A contrastive loss pulls
positive descriptor pairs together and pushes negatives apart up to a
margin, and plain SGD with momentum updates all learnable parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import descriptor as desc
from .descriptor import DenseDescriptorField, ModelGrads
from .knn import nearest_columns
from .model import ModelParams, clamp_offsets


@dataclass(frozen=True)
class Bbox:
    """Pixel rectangle: x, y is the top-left corner (x = column)."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.w <= 0 or self.h <= 0:
            raise ValueError("bbox must be nonempty")
        if self.x < 0 or self.y < 0:
            raise ValueError("bbox origin must be nonnegative")

    def check_inside(self, height: int, width: int) -> None:
        if self.x + self.w > width or self.y + self.h > height:
            raise ValueError(f"bbox {self} exceeds image bounds {width}x{height}")

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """All (ys, xs) inside the box in row-major scan order."""
        ys, xs = np.mgrid[self.y : self.y + self.h, self.x : self.x + self.w]
        return ys.ravel(), xs.ravel()

    def contains(self, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
        return (
            (xs >= self.x)
            & (xs < self.x + self.w)
            & (ys >= self.y)
            & (ys < self.y + self.h)
        )


@dataclass
class ImagePairSample:
    source: np.ndarray
    target: np.ndarray
    bbox_source: Bbox
    bbox_target: Bbox

    def __post_init__(self) -> None:
        self.bbox_source.check_inside(*self.source.shape[1:])
        self.bbox_target.check_inside(*self.target.shape[1:])


@dataclass
class TrainingBatch:
    """Pixel pairs as integer arrays of shape (n, 4) with columns
    (y_source, x_source, y_target, x_target)."""

    positives: np.ndarray
    negatives: np.ndarray

    @property
    def size(self) -> int:
        return len(self.positives) + len(self.negatives)


@dataclass(frozen=True)
class LossConfig:
    margin: float = 0.2
    positive_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if not 0.0 < self.positive_fraction < 1.0:
            raise ValueError("positive_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 40.0
    momentum: float = 0.9
    epochs: int = 5
    seed: int = 0
    consistency_tau: float = 1.0
    max_samples: int = 1024
    candidate_factor: int = 4
    freeze_backbone: bool = True
    # Per-group step-size scale for the log-bandwidths. The bandwidth
    # gradient is an order of magnitude larger than the offset gradients
    # and, driven at the shared rate, runs the bandwidths into collapse
    # within tens of steps; a small relative rate keeps them adaptive but
    # stable at desk scale.
    bandwidth_lr_scale: float = 0.02
    loss: LossConfig = field(default_factory=LossConfig)


def _empty_pairs() -> np.ndarray:
    return np.empty((0, 4), dtype=np.intp)


def mine_correspondences(
    field_a: DenseDescriptorField,
    field_b: DenseDescriptorField,
    bbox_a: Bbox,
    bbox_b: Bbox,
    tau: float,
    rng: np.random.Generator,
    max_samples: int = 1024,
    candidate_factor: int = 4,
    positive_fraction: float = 0.5,
    rebalance: bool = True,
) -> TrainingBatch:
    """Mine labeled pixel pairs by round-trip consistency.

    Source pixels are sampled uniformly at random from bbox_a (with
    replacement, candidate_factor * max_samples of them). Each is matched
    to its nearest descriptor in bbox_b; the match is matched back into
    bbox_a, and the pair is positive iff the round trip lands within tau
    pixels (Euclidean) of the start, negative otherwise. With rebalance,
    positives are subsampled so they make up at most positive_fraction of
    the batch whenever any negatives exist, and the batch is capped at
    max_samples by proportional subsampling.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    bbox_a.check_inside(*field_a.values.shape[1:])
    bbox_b.check_inside(*field_b.values.shape[1:])
    n_cand = candidate_factor * max_samples
    ys_a = rng.integers(bbox_a.y, bbox_a.y + bbox_a.h, size=n_cand)
    xs_a = rng.integers(bbox_a.x, bbox_a.x + bbox_a.w, size=n_cand)
    grid_b = bbox_b.pixel_grid()
    desc_b = field_b.values[:, grid_b[0], grid_b[1]]
    fwd_idx, _ = nearest_columns(field_a.values[:, ys_a, xs_a], desc_b)
    ys_b, xs_b = grid_b[0][fwd_idx], grid_b[1][fwd_idx]

    # one back-match per distinct target pixel, then gathered per candidate
    uniq, inverse = np.unique(fwd_idx, return_inverse=True)
    grid_a = bbox_a.pixel_grid()
    desc_a = field_a.values[:, grid_a[0], grid_a[1]]
    back_idx, _ = nearest_columns(desc_b[:, uniq], desc_a)
    back_y = grid_a[0][back_idx][inverse]
    back_x = grid_a[1][back_idx][inverse]

    roundtrip = np.hypot(back_x - xs_a, back_y - ys_a)
    is_pos = roundtrip <= tau
    pairs = np.stack([ys_a, xs_a, ys_b, xs_b], axis=1).astype(np.intp)
    positives = pairs[is_pos]
    negatives = pairs[~is_pos]

    if rebalance and len(positives) and len(negatives):
        limit = int(
            np.floor(positive_fraction / (1.0 - positive_fraction) * len(negatives))
        )
        if len(positives) > limit > 0:
            keep = rng.choice(len(positives), size=limit, replace=False)
            positives = positives[np.sort(keep)]
    total = len(positives) + len(negatives)
    if total > max_samples:
        n_pos = int(round(max_samples * len(positives) / total))
        n_pos = min(n_pos, len(positives))
        n_neg = min(max_samples - n_pos, len(negatives))
        n_pos = max_samples - n_neg
        if len(positives) > n_pos:
            keep = rng.choice(len(positives), size=n_pos, replace=False)
            positives = positives[np.sort(keep)]
        if len(negatives) > n_neg:
            keep = rng.choice(len(negatives), size=n_neg, replace=False)
            negatives = negatives[np.sort(keep)]
    if len(positives) == 0:
        positives = _empty_pairs()
    if len(negatives) == 0:
        negatives = _empty_pairs()
    return TrainingBatch(positives=positives, negatives=negatives)


def contrastive_loss(
    batch: TrainingBatch,
    field_a: DenseDescriptorField,
    field_b: DenseDescriptorField,
    margin: float = 0.2,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Correspondence contrastive loss and its field gradients.

    loss = (1/2N) * sum_i [ l_i d_i^2 + (1 - l_i) max(0, margin - d_i^2) ]
    with d_i the descriptor distance of pair i and N the batch size.
    Negative pairs at or beyond the margin contribute neither loss nor
    gradient. Returns (loss, grad_field_a, grad_field_b).
    """
    n = batch.size
    if n == 0:
        raise ValueError("empty training batch")
    grad_a = np.zeros_like(field_a.values)
    grad_b = np.zeros_like(field_b.values)
    loss = 0.0
    pos = batch.positives
    if len(pos):
        a = field_a.values[:, pos[:, 0], pos[:, 1]]
        b = field_b.values[:, pos[:, 2], pos[:, 3]]
        diff = a - b
        loss += float((diff * diff).sum())
        g = diff / n
        np.add.at(grad_a, (slice(None), pos[:, 0], pos[:, 1]), g)
        np.add.at(grad_b, (slice(None), pos[:, 2], pos[:, 3]), -g)
    neg = batch.negatives
    if len(neg):
        a = field_a.values[:, neg[:, 0], neg[:, 1]]
        b = field_b.values[:, neg[:, 2], neg[:, 3]]
        diff = a - b
        d2 = (diff * diff).sum(axis=0)
        active = d2 < margin
        loss += float(np.maximum(margin - d2, 0.0).sum())
        g = -(diff * active[None, :]) / n
        np.add.at(grad_a, (slice(None), neg[:, 0], neg[:, 1]), g)
        np.add.at(grad_b, (slice(None), neg[:, 2], neg[:, 3]), -g)
    return loss / (2.0 * n), grad_a, grad_b


class SgdMomentum:
    """Plain SGD with momentum over every learnable parameter group."""

    def __init__(self, params: ModelParams, config: TrainConfig):
        self.lr = config.learning_rate
        self.momentum = config.momentum
        self.freeze_backbone = config.freeze_backbone
        self.bandwidth_lr = config.learning_rate * config.bandwidth_lr_scale
        self.vel = desc.zero_grads(params)

    def step(self, params: ModelParams, grads: ModelGrads) -> None:
        mu, lr = self.momentum, self.lr
        if not self.freeze_backbone:
            for vl, gl, pl in zip(self.vel.backbone, grads.backbone, params.backbone):
                for v, g, p in zip(vl, gl, pl):
                    v.weights *= mu
                    v.weights -= lr * g.weights
                    p.weights += v.weights
                    v.bias *= mu
                    v.bias -= lr * g.bias
                    p.bias += v.bias
        for k, lp in enumerate(params.patterns):
            self.vel.offsets_s[k] = mu * self.vel.offsets_s[k] - lr * grads.offsets_s[k]
            lp.offsets_s += self.vel.offsets_s[k]
            self.vel.offsets_t[k] = mu * self.vel.offsets_t[k] - lr * grads.offsets_t[k]
            lp.offsets_t += self.vel.offsets_t[k]
            self.vel.log_bandwidth[k] = (
                mu * self.vel.log_bandwidth[k] - self.bandwidth_lr * grads.log_bandwidth[k]
            )
            lp.log_bandwidth += self.vel.log_bandwidth[k]
        clamp_offsets(params)


@dataclass
class PairStats:
    loss: float
    positive_count: int
    negative_count: int
    mean_positive_distance: float


@dataclass
class EpochStats:
    mean_loss: float
    mean_positive_distance: float
    mean_negative_distance: float
    positive_count: int
    negative_count: int
    pairs: list[PairStats] = field(default_factory=list)


def train_epoch(
    pairs: list[ImagePairSample],
    params: ModelParams,
    optimizer: SgdMomentum,
    config: TrainConfig,
    rng: np.random.Generator,
) -> EpochStats:
    """One pass over the pairs: extract, mine, compute loss, update."""
    losses = []
    pos_dists = []
    neg_dists = []
    per_pair = []
    n_pos = n_neg = 0
    for pair in pairs:
        field_a, cache_a = desc.extract_dense_cached(pair.source, params)
        field_b, cache_b = desc.extract_dense_cached(pair.target, params)
        batch = mine_correspondences(
            field_a,
            field_b,
            pair.bbox_source,
            pair.bbox_target,
            config.consistency_tau,
            rng,
            max_samples=config.max_samples,
            candidate_factor=config.candidate_factor,
            positive_fraction=config.loss.positive_fraction,
        )
        if batch.size == 0:
            continue
        pair_pos_dist = float("nan")
        for pairs_arr, sink in ((batch.positives, pos_dists), (batch.negatives, neg_dists)):
            if len(pairs_arr):
                a = field_a.values[:, pairs_arr[:, 0], pairs_arr[:, 1]]
                b = field_b.values[:, pairs_arr[:, 2], pairs_arr[:, 3]]
                sink.append(float(np.sqrt(((a - b) ** 2).sum(axis=0)).mean()))
                if pairs_arr is batch.positives:
                    pair_pos_dist = sink[-1]
        n_pos += len(batch.positives)
        n_neg += len(batch.negatives)
        loss, grad_a, grad_b = contrastive_loss(
            batch, field_a, field_b, config.loss.margin
        )
        losses.append(loss)
        per_pair.append(
            PairStats(loss, len(batch.positives), len(batch.negatives), pair_pos_dist)
        )
        if config.learning_rate == 0.0:
            continue
        grads = desc.extract_backward(
            pair.source, params, grad_a, cache_a, freeze_backbone=config.freeze_backbone
        )
        grads_b = desc.extract_backward(
            pair.target, params, grad_b, cache_b, freeze_backbone=config.freeze_backbone
        )
        desc.accumulate_grads(grads, grads_b)
        optimizer.step(params, grads)
    return EpochStats(
        mean_loss=float(np.mean(losses)) if losses else 0.0,
        mean_positive_distance=float(np.mean(pos_dists)) if pos_dists else float("nan"),
        mean_negative_distance=float(np.mean(neg_dists)) if neg_dists else float("nan"),
        positive_count=n_pos,
        negative_count=n_neg,
        pairs=per_pair,
    )


def train(
    pairs: list[ImagePairSample], params: ModelParams, config: TrainConfig
) -> list[EpochStats]:
    """Run config.epochs passes, updating params in place; returns per-epoch
    statistics. All randomness derives from config.seed."""
    rng = np.random.default_rng(config.seed)
    optimizer = SgdMomentum(params, config)
    return [train_epoch(pairs, params, optimizer, config, rng) for _ in range(config.epochs)]
