"""Dense local self-similarity descriptors for semantic image matching.

Library layout:

  ops         low-level array kernels with exact adjoints
  model       configuration dataclasses, parameter init, offset clamping
  backbone    small conv feature extractor / pyramid injection
  similarity  shifting sampler, self-similarity layer, gating and pooling
  descriptor  multi-scale dense descriptor assembly and its backward
  learning    consistency mining, contrastive loss, SGD training loop
  matching    winner-take-all flow, consistency mask, smoothing, warping
  evalkit     PCK and endpoint-error metrics, synthetic pair generation
  fileio      binary tensor/flow/model formats, image and text IO
  cli         command-line front end (also `python -m selfsim.cli`)
"""

from .backbone import FeaturePyramid, backbone_backward, backbone_forward, inject_pyramid
from .descriptor import (
    DenseDescriptorField,
    descriptor_at,
    extract_backward,
    extract_dense,
    extract_from_pyramid,
    field_from_values,
)
from .evalkit import (
    GroundTruthFlow,
    KeypointSet,
    WarpParams,
    flow_accuracy,
    pck,
    random_patterned_image,
    random_smooth_image,
    synth_pair,
)
from .learning import (
    Bbox,
    ImagePairSample,
    LossConfig,
    TrainConfig,
    TrainingBatch,
    contrastive_loss,
    mine_correspondences,
    train,
    train_epoch,
)
from .matching import FlowField, lr_consistency_mask, nn_flow, smooth_flow, warp_image
from .model import (
    BackboneConfig,
    LevelPatterns,
    ModelConfig,
    ModelParams,
    SHIFT_BILINEAR,
    SHIFT_NEAREST,
    StagePlan,
    init_model,
)
from .ops import ConvLayerParams

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig",
    "Bbox",
    "ConvLayerParams",
    "DenseDescriptorField",
    "FeaturePyramid",
    "FlowField",
    "GroundTruthFlow",
    "ImagePairSample",
    "KeypointSet",
    "LevelPatterns",
    "LossConfig",
    "ModelConfig",
    "ModelParams",
    "SHIFT_BILINEAR",
    "SHIFT_NEAREST",
    "StagePlan",
    "TrainConfig",
    "TrainingBatch",
    "WarpParams",
    "backbone_backward",
    "backbone_forward",
    "contrastive_loss",
    "descriptor_at",
    "extract_backward",
    "extract_dense",
    "extract_from_pyramid",
    "field_from_values",
    "flow_accuracy",
    "init_model",
    "inject_pyramid",
    "lr_consistency_mask",
    "mine_correspondences",
    "nn_flow",
    "pck",
    "random_patterned_image",
    "random_smooth_image",
    "smooth_flow",
    "synth_pair",
    "train",
    "train_epoch",
    "warp_image",
]
