"""Mask-aware density regression for crowd counting."""

__version__ = "0.1.0"

from .backbone import Backbone, BackboneConfig, build_backbone
from .estimator import MaskAwareCounter
from .exceptions import DataError, NumericError
from .gt import (
    GtConfig,
    PointAnnotation,
    apply_roi,
    derive_mask,
    downsample_density,
    downsample_mask,
    generate_density_map,
)
from .heads import (
    DensityBranch,
    FusionRegressor,
    MaskBranch,
    MaskEmbed,
    fuse_elementwise,
    fuse_ste,
    hard_mask,
    mask_posterior,
    ste_mask,
)
from .losses import LossConfig, combined_loss, focal_loss, mse_density_loss, variant_loss
from .metrics import EvalReport, count_from_density, evaluate
from .model import (
    FusionVariant,
    MaskAwareNet,
    assemble_model,
    count_parameters,
    load_checkpoint,
    predict_maps,
    save_checkpoint,
)
from .train import TrainSchedule, augment, crop_patches, train

__all__ = [
    "Backbone",
    "BackboneConfig",
    "build_backbone",
    "MaskAwareCounter",
    "DataError",
    "NumericError",
    "GtConfig",
    "PointAnnotation",
    "apply_roi",
    "derive_mask",
    "downsample_density",
    "downsample_mask",
    "generate_density_map",
    "DensityBranch",
    "FusionRegressor",
    "MaskBranch",
    "MaskEmbed",
    "fuse_elementwise",
    "fuse_ste",
    "hard_mask",
    "mask_posterior",
    "ste_mask",
    "LossConfig",
    "combined_loss",
    "focal_loss",
    "mse_density_loss",
    "variant_loss",
    "EvalReport",
    "count_from_density",
    "evaluate",
    "FusionVariant",
    "MaskAwareNet",
    "assemble_model",
    "count_parameters",
    "load_checkpoint",
    "predict_maps",
    "save_checkpoint",
    "TrainSchedule",
    "augment",
    "crop_patches",
    "train",
]
