"""Whole-volume prediction by sliding-window tiling and dataset evaluation.

Overlapping patches are blended with Gaussian (default) or uniform window
weights; probabilities are accumulated in float64 so degenerate tilings
reproduce a direct forward pass to high precision. Predictions depend
only on present-modality content: the network's zero gate makes absent
channels irrelevant exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .errors import MissingLabelError, ShapeError
from .metrics import MetricsRow, confusion_metrics, mean_row
from .network import F3NetModel
from .pathoseg import PathosegMask, binarize
from .volumes import MultiModalCase, VolumeGrid


@dataclass(frozen=True)
class PredictConfig:
    """Sliding-window inference settings.

    ``tta_mirror`` averages the softmax over all eight axis-flip
    combinations of each window; off by default to keep prediction cheap.
    """

    patch_shape: tuple[int, int, int] = (80, 112, 80)
    window_overlap: float = 0.5
    blend: str = "gaussian"
    threshold: float = 0.5
    batch_size: int = 2
    tta_mirror: bool = False

    def __post_init__(self):
        object.__setattr__(self, "patch_shape", tuple(int(n) for n in self.patch_shape))
        if not 0.0 <= self.window_overlap < 1.0:
            raise ShapeError(f"window_overlap must lie in [0, 1), got {self.window_overlap}")
        if not 0.0 < self.threshold < 1.0:
            raise ShapeError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.blend not in ("gaussian", "uniform"):
            raise ShapeError(f"blend must be 'gaussian' or 'uniform', got {self.blend!r}")


def window_starts(dim: int, patch: int, overlap: float) -> list[int]:
    """Start offsets covering [0, dim) with the requested overlap."""
    if dim <= patch:
        return [0]
    step = max(1, int(round(patch * (1.0 - overlap))))
    starts = list(range(0, dim - patch + 1, step))
    if starts[-1] != dim - patch:
        starts.append(dim - patch)
    return starts


def blend_weights(patch_shape, blend: str) -> np.ndarray:
    """Per-voxel window weight map; strictly positive everywhere."""
    if blend == "uniform":
        return np.ones(patch_shape, dtype=np.float64)
    axes = []
    for n in patch_shape:
        sigma = n / 8.0
        coords = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
        axes.append(np.exp(-0.5 * (coords / sigma) ** 2))
    w = axes[0][:, None, None] * axes[1][None, :, None] * axes[2][None, None, :]
    return w / w.max()


def _window_probs(model, tiles: torch.Tensor, presence, cfg: PredictConfig) -> np.ndarray:
    probs = torch.softmax(model(tiles, presence), dim=1)
    if cfg.tta_mirror:
        spatial = (2, 3, 4)
        for k in range(1, 8):
            axes = tuple(a for b, a in enumerate(spatial) if k & (1 << b))
            mirrored = model(torch.flip(tiles, axes), presence)
            probs = probs + torch.flip(torch.softmax(mirrored, dim=1), axes)
        probs = probs / 8.0
    return probs.numpy().astype(np.float64)


def predict_case(model: F3NetModel, case: MultiModalCase, cfg: PredictConfig):
    """Predict one case; returns (foreground probability grid, Pathoseg mask).

    The case must already be synthesized/normalized (`load_case` does both).
    Volumes smaller than the patch are zero-padded for tiling and the
    output is cropped back, so output geometry equals case geometry.
    """
    data = case.stack()
    spatial = data.shape[1:]
    patch = cfg.patch_shape
    model.check_patch_shape(patch)

    pads = [(max(0, p - d) // 2, max(0, p - d) - max(0, p - d) // 2) for d, p in zip(spatial, patch)]
    padded = np.pad(data, [(0, 0)] + pads, mode="constant") if any(p != (0, 0) for p in pads) else data
    padded_shape = padded.shape[1:]

    starts = [window_starts(padded_shape[a], patch[a], cfg.window_overlap) for a in range(3)]
    weights = blend_weights(patch, cfg.blend)

    num_classes = model.spec.num_classes
    accum = np.zeros((num_classes,) + padded_shape, dtype=np.float64)
    wsum = np.zeros(padded_shape, dtype=np.float64)

    offsets = [(x, y, z) for x in starts[0] for y in starts[1] for z in starts[2]]
    model.eval()
    with torch.no_grad():
        for i in range(0, len(offsets), cfg.batch_size):
            chunk = offsets[i : i + cfg.batch_size]
            tiles = np.stack(
                [padded[:, x : x + patch[0], y : y + patch[1], z : z + patch[2]] for x, y, z in chunk]
            )
            probs = _window_probs(model, torch.from_numpy(tiles), case.presence, cfg)
            for j, (x, y, z) in enumerate(chunk):
                sl = (slice(None), slice(x, x + patch[0]), slice(y, y + patch[1]), slice(z, z + patch[2]))
                accum[sl] += probs[j] * weights
                wsum[sl[1:]] += weights

    if not (wsum > 0).all():
        raise ShapeError("sliding-window tiling left uncovered voxels")
    probs = accum / wsum
    crop = tuple(slice(p[0], p[0] + d) for p, d in zip(pads, spatial))
    foreground = (1.0 - probs[0])[crop].astype(np.float32)
    mask = (foreground > cfg.threshold).astype(np.uint8)
    return VolumeGrid(foreground, case.spacing), PathosegMask(mask, case.spacing)


def evaluate_dataset(model: F3NetModel, cases: Sequence[MultiModalCase], cfg: PredictConfig):
    """Score every case against its Pathoseg ground truth.

    Returns:
        (rows, summary): per-case MetricsRow list plus the unweighted mean.

    Raises:
        MissingLabelError: a case lacks a ground-truth label.
    """
    rows = []
    for case in cases:
        if case.label is None:
            raise MissingLabelError(f"case {case.case_id!r} has no ground-truth label")
        _, mask = predict_case(model, case, cfg)
        target = binarize(case.label)
        rows.append(confusion_metrics(mask.data, target.data, case_id=case.case_id))
    return rows, mean_row(rows)


def score_predictions(pred_masks: Sequence[tuple[str, np.ndarray]],
                      labels: dict[str, np.ndarray]):
    """Score already-computed binary masks against labels by case id."""
    rows = []
    for case_id, pred in pred_masks:
        if case_id not in labels:
            raise MissingLabelError(f"no ground-truth label for case {case_id!r}")
        rows.append(confusion_metrics(pred, labels[case_id], case_id=case_id))
    return rows, mean_row(rows)
