"""Mask-fusion pipeline producing the binary whole-pathology target.

The pipeline resamples an already co-registered WMH mask onto the case
grid, merges the dataset's distinct pathology masks into one labeled
"main pathology" mask, folds the WMH mask in to form the "whole
pathology" mask, and binarizes the result. All functions are pure and
thread-safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import GeometryMismatchError, NonBinaryWMHError, ShapeError


@dataclass(frozen=True)
class SegMask:
    """Integer-labeled 3D grid; label 0 is background.

    Args:
        data: 3D array of nonnegative integer labels.
        spacing: voxel size in mm.
        label_semantics: optional map from label value to a human name.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    label_semantics: Optional[dict[int, str]] = field(default=None)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeError(f"mask must be 3D with positive extents, got {data.shape}")
        if not np.issubdtype(data.dtype, np.integer):
            if not np.all(data == np.rint(data)):
                raise ShapeError("mask labels must be integers")
            data = np.rint(data).astype(np.int32)
        else:
            data = data.astype(np.int32)
        if data.min() < 0:
            raise ShapeError("mask labels must be nonnegative")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ShapeError(f"spacing must be three positive values, got {self.spacing}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def max_label(self) -> int:
        return int(self.data.max())

    def same_geometry(self, other: "SegMask") -> bool:
        return self.shape == other.shape and self.spacing == other.spacing


@dataclass(frozen=True)
class PathosegMask:
    """Binary 3D grid marking all pathological tissue as 1."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ShapeError(f"mask must be 3D, got {data.shape}")
        if not np.isin(data, (0, 1)).all():
            raise ShapeError("Pathoseg values must be 0 or 1")
        data = data.astype(np.uint8)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


def _nearest_indices(n_src: int, s_src: float, n_tgt: int, s_tgt: float) -> np.ndarray:
    # Voxel-center alignment with a shared corner origin: target center j maps
    # to source coordinate (j + 0.5) * s_tgt / s_src - 0.5.
    coords = (np.arange(n_tgt) + 0.5) * (s_tgt / s_src) - 0.5
    return np.clip(np.rint(coords).astype(np.int64), 0, n_src - 1)


def resample_mask(mask: SegMask, target_shape, target_spacing) -> SegMask:
    """Nearest-neighbor resample of a label grid onto a target geometry.

    Assumes source and target are co-registered (identity transform up to
    grid resolution). The output label set is a subset of the input's.
    """
    target_shape = tuple(int(n) for n in target_shape)
    target_spacing = tuple(float(s) for s in target_spacing)
    if mask.shape == target_shape and mask.spacing == target_spacing:
        return SegMask(mask.data, mask.spacing, mask.label_semantics)
    idx = [
        _nearest_indices(mask.shape[a], mask.spacing[a], target_shape[a], target_spacing[a])
        for a in range(3)
    ]
    data = mask.data[np.ix_(*idx)]
    return SegMask(data, target_spacing, mask.label_semantics)


def merge_distinct_masks(masks: Sequence[SegMask]) -> SegMask:
    """Merge labeled masks into one "main pathology" mask.

    Labels of later masks are shifted by the running maximum label so
    distinct sources never collide; where supports overlap, the earlier
    mask in the list wins.

    Raises:
        GeometryMismatchError: inputs disagree on shape or spacing.
        ShapeError: empty input list.
    """
    if not masks:
        raise ShapeError("merge_distinct_masks requires at least one mask")
    ref = masks[0]
    for m in masks[1:]:
        if not ref.same_geometry(m):
            raise GeometryMismatchError(
                f"mask geometry {m.shape}/{m.spacing} does not match {ref.shape}/{ref.spacing}"
            )
    out = np.zeros(ref.shape, dtype=np.int32)
    semantics: dict[int, str] = {}
    offset = 0
    for mask in masks:
        support = mask.data > 0
        write = support & (out == 0)
        out[write] = mask.data[write] + offset
        if mask.label_semantics:
            semantics.update({k + offset: v for k, v in mask.label_semantics.items() if k > 0})
        offset += mask.max_label()
    return SegMask(out, ref.spacing, semantics or None)


def merge_whole(main: SegMask, wmh: SegMask) -> SegMask:
    """Fold a binary WMH mask into the main pathology mask.

    WMH voxels receive a fresh label ``max(main) + 1``; voxels already
    labeled in the main mask keep their main-pathology label.

    Raises:
        GeometryMismatchError: geometry disagreement.
        NonBinaryWMHError: the WMH mask contains labels other than 0/1.
    """
    if not main.same_geometry(wmh):
        raise GeometryMismatchError(
            f"WMH geometry {wmh.shape}/{wmh.spacing} does not match main {main.shape}/{main.spacing}"
        )
    if wmh.max_label() > 1:
        raise NonBinaryWMHError(f"WMH mask must be binary, found label {wmh.max_label()}")
    fresh = main.max_label() + 1
    out = main.data.copy()
    out[(wmh.data == 1) & (main.data == 0)] = fresh
    semantics = dict(main.label_semantics) if main.label_semantics else {}
    if (wmh.data == 1).any():
        semantics[fresh] = "wmh"
    return SegMask(out, main.spacing, semantics or None)


def binarize(mask: SegMask) -> PathosegMask:
    """Collapse all nonzero labels to foreground value 1."""
    return PathosegMask((mask.data > 0).astype(np.uint8), mask.spacing)
