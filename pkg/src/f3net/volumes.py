"""Modality-aware volumetric data model.

Defines the six-modality channel order, zero-image synthesis for missing
modalities, presence detection, and nonzero-support intensity
normalization. All operations are pure functions over immutable value
objects and are safe to call concurrently.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateIntensityWarning,
    EmptyCaseError,
    GeometryMismatchError,
    ShapeError,
)


class Modality(IntEnum):
    """Canonical modality order; the channel index of every 6-slot stack."""

    T1 = 0
    T1GD = 1
    T2 = 2
    FLAIR = 3
    DWI = 4
    ADC = 5


NUM_MODALITIES = len(Modality)

# File-name suffix per modality (case layout `{case_id}_{suffix}.nii.gz`).
MODALITY_SUFFIX = {
    Modality.T1: "t1",
    Modality.T1GD: "t1gd",
    Modality.T2: "t2",
    Modality.FLAIR: "flair",
    Modality.DWI: "dwi",
    Modality.ADC: "adc",
}
SUFFIX_MODALITY = {v: k for k, v in MODALITY_SUFFIX.items()}


@dataclass(frozen=True)
class VolumeGrid:
    """A 3D scalar volume with voxel spacing in millimetres.

    Args:
        data: 3D array of finite intensities.
        spacing: (sx, sy, sz) voxel size in mm, each > 0.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeError(f"volume must be 3D with positive extents, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ShapeError("volume contains non-finite values")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ShapeError(f"spacing must be three positive values, got {self.spacing}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def is_zero(self) -> bool:
        """True iff every voxel is exactly zero."""
        return not np.any(self.data)

    def same_geometry(self, other: "VolumeGrid") -> bool:
        return self.shape == other.shape and self.spacing == other.spacing

    @classmethod
    def zeros(cls, shape, spacing=(1.0, 1.0, 1.0)) -> "VolumeGrid":
        return cls(np.zeros(shape, dtype=np.float32), spacing)


@dataclass(frozen=True)
class ModalityPresence:
    """Boolean flags recording which of the six modalities are real."""

    present: tuple[bool, ...]

    def __post_init__(self):
        flags = tuple(bool(p) for p in self.present)
        if len(flags) != NUM_MODALITIES:
            raise ShapeError(f"presence must have {NUM_MODALITIES} entries, got {len(flags)}")
        if not any(flags):
            raise EmptyCaseError("a case must contain at least one real modality")
        object.__setattr__(self, "present", flags)

    def __getitem__(self, m: Modality) -> bool:
        return self.present[int(m)]

    def __iter__(self):
        return iter(self.present)

    def as_array(self) -> np.ndarray:
        return np.array(self.present, dtype=bool)

    @classmethod
    def from_iterable(cls, flags) -> "ModalityPresence":
        return cls(tuple(flags))


@dataclass(frozen=True)
class MultiModalCase:
    """Aligned six-slot stack of volumes plus presence flags and optional label.

    Absent-modality slots hold exact zero-images of the shared geometry.
    """

    case_id: str
    volumes: tuple[VolumeGrid, ...]
    presence: ModalityPresence
    label: Optional["SegMask"] = field(default=None)

    def __post_init__(self):
        if len(self.volumes) != NUM_MODALITIES:
            raise ShapeError(f"expected {NUM_MODALITIES} volumes, got {len(self.volumes)}")
        ref = self.volumes[0]
        for vol in self.volumes[1:]:
            if not ref.same_geometry(vol):
                raise GeometryMismatchError(
                    f"case {self.case_id!r}: volume geometry mismatch "
                    f"({ref.shape}/{ref.spacing} vs {vol.shape}/{vol.spacing})"
                )
        for m in Modality:
            if not self.presence[m] and not self.volumes[m].is_zero():
                raise GeometryMismatchError(
                    f"case {self.case_id!r}: absent modality {m.name} has nonzero voxels"
                )
        if self.label is not None and (
            self.label.shape != ref.shape or self.label.spacing != ref.spacing
        ):
            raise GeometryMismatchError(
                f"case {self.case_id!r}: label geometry {self.label.shape} does not match case {ref.shape}"
            )
        object.__setattr__(self, "volumes", tuple(self.volumes))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.volumes[0].shape

    @property
    def spacing(self) -> tuple[float, float, float]:
        return self.volumes[0].spacing

    def stack(self) -> np.ndarray:
        """Channel-first (6, x, y, z) float32 view of the six volumes."""
        return np.stack([v.data for v in self.volumes], axis=0)


def synthesize_zero_images(
    raw_case: Mapping[Modality, VolumeGrid], case_id: str = "", label=None
) -> MultiModalCase:
    """Fill missing modality slots with zero-images of the shared geometry.

    Args:
        raw_case: partial map from modality to volume; at least one entry.
        case_id: identifier attached to the resulting case.
        label: optional segmentation mask sharing the case geometry.

    Returns:
        A full six-slot case whose presence flags mirror the provided slots.

    Raises:
        EmptyCaseError: no modalities provided.
        GeometryMismatchError: provided volumes disagree on shape or spacing.
    """
    provided = {Modality(m): v for m, v in raw_case.items()}
    if not provided:
        raise EmptyCaseError("cannot synthesize a case from zero modalities")
    ref = next(iter(provided.values()))
    for m, vol in provided.items():
        if not ref.same_geometry(vol):
            raise GeometryMismatchError(
                f"modality {m.name}: geometry {vol.shape}/{vol.spacing} "
                f"does not match {ref.shape}/{ref.spacing}"
            )
    volumes = []
    flags = []
    for m in Modality:
        if m in provided:
            volumes.append(provided[m])
            flags.append(True)
        else:
            volumes.append(VolumeGrid.zeros(ref.shape, ref.spacing))
            flags.append(False)
    return MultiModalCase(
        case_id=case_id,
        volumes=tuple(volumes),
        presence=ModalityPresence(tuple(flags)),
        label=label,
    )


def detect_presence(case: MultiModalCase) -> ModalityPresence:
    """Recover presence flags by exact all-zero testing of each slot.

    A real modality that happens to be all-zero is indistinguishable from
    a missing one and is reported as absent.
    """
    return ModalityPresence(tuple(not case.volumes[m].is_zero() for m in Modality))


def normalize_intensity(grid: VolumeGrid) -> VolumeGrid:
    """Z-score normalize over the nonzero support; zero voxels stay zero.

    An identically-zero grid (a zero-image) is returned unchanged. If the
    nonzero support has zero variance, a ``DegenerateIntensityWarning`` is
    issued and the support is only mean-shifted (mapping it to zero).
    """
    data = grid.data
    support = data != 0
    if not support.any():
        return grid
    values = data[support]
    mean = values.mean(dtype=np.float64)
    std = values.std(dtype=np.float64)
    out = np.zeros_like(data)
    if std == 0:
        warnings.warn(
            "nonzero support has zero variance; applying mean shift only",
            DegenerateIntensityWarning,
        )
        out[support] = (values - mean).astype(np.float32)
    else:
        out[support] = ((values - mean) / std).astype(np.float32)
    return VolumeGrid(out, grid.spacing)


def normalize_case(case: MultiModalCase) -> MultiModalCase:
    """Apply ``normalize_intensity`` to every slot (zero-images unaffected)."""
    return MultiModalCase(
        case_id=case.case_id,
        volumes=tuple(normalize_intensity(v) for v in case.volumes),
        presence=case.presence,
        label=case.label,
    )
