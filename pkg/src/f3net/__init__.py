"""Six-modality brain MRI pathology segmentation, robust to missing inputs.

Missing modalities are substituted by exact zero-images and their encoder
features are gated to zero, so absent channels contribute nothing to
predictions or gradients. Includes the mask-fusion preprocessing pipeline
(whole-pathology and Pathoseg masks), a patch-based trainer, sliding-window
inference, and a metrics/report harness.
"""

__version__ = "0.1.0"

from .inference import PredictConfig, evaluate_dataset, predict_case
from .losses import LossWeights, ce_loss, combined_loss, dice_loss
from .metrics import MetricsRow, confusion_metrics, mean_row
from .network import F3NetModel, NetworkSpec, fuse, load_checkpoint, mask_features, save_checkpoint
from .pathoseg import PathosegMask, SegMask, binarize, merge_distinct_masks, merge_whole, resample_mask
from .training import TrainConfig, augment, lr_at, sample_patch, train, train_step
from .volumes import (
    Modality,
    ModalityPresence,
    MultiModalCase,
    VolumeGrid,
    detect_presence,
    normalize_intensity,
    synthesize_zero_images,
)

__all__ = [
    "F3NetModel",
    "LossWeights",
    "MetricsRow",
    "Modality",
    "ModalityPresence",
    "MultiModalCase",
    "NetworkSpec",
    "PathosegMask",
    "PredictConfig",
    "SegMask",
    "TrainConfig",
    "VolumeGrid",
    "augment",
    "binarize",
    "ce_loss",
    "combined_loss",
    "confusion_metrics",
    "detect_presence",
    "dice_loss",
    "evaluate_dataset",
    "fuse",
    "load_checkpoint",
    "lr_at",
    "mask_features",
    "mean_row",
    "merge_distinct_masks",
    "merge_whole",
    "normalize_intensity",
    "predict_case",
    "resample_mask",
    "sample_patch",
    "save_checkpoint",
    "synthesize_zero_images",
    "train",
    "train_step",
]
