"""Synthetic phantom cases: spherical lesions on a smooth background.

Phantoms make the whole pipeline testable without clinical data. A voxel
belongs to a lesion when its center lies within the sphere radius
(inclusive); the ground-truth mask labels lesions 1..N in placement
order (earlier lesions win on overlap).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeError
from .nifti import write_volume
from .pathoseg import SegMask
from .volumes import MODALITY_SUFFIX, Modality, VolumeGrid

# Lesion intensity offset relative to background, per modality.
DEFAULT_CONTRAST = {
    Modality.T1: -0.45,
    Modality.T1GD: 0.9,
    Modality.T2: 0.7,
    Modality.FLAIR: 1.2,
    Modality.DWI: 0.8,
    Modality.ADC: -0.6,
}


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry, lesion, and noise parameters of one synthetic case."""

    shape: tuple[int, int, int] = (32, 32, 32)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    num_lesions: int = 1
    radius_range: tuple[float, float] = (4.0, 7.0)
    lesions: Optional[tuple[tuple[tuple[float, float, float], float], ...]] = None
    contrast: dict = field(default_factory=lambda: dict(DEFAULT_CONTRAST))
    modalities: tuple[Modality, ...] = tuple(Modality)
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        object.__setattr__(self, "modalities", tuple(Modality(m) for m in self.modalities))
        if len(self.shape) != 3 or min(self.shape) < 1:
            raise ShapeError(f"phantom shape must be three positive ints, got {self.shape}")
        if not self.modalities:
            raise ShapeError("phantom must emit at least one modality")
        if self.num_lesions < 0 or self.noise < 0:
            raise ShapeError("num_lesions and noise must be nonnegative")
        if self.lesions is not None:
            for center, radius in self.lesions:
                if radius <= 0:
                    raise ShapeError(f"lesion radius must be positive, got {radius}")
                for c, n in zip(center, self.shape):
                    if not 0 <= c <= n - 1:
                        raise ShapeError(f"lesion center {center} outside grid {self.shape}")


def _draw_lesions(spec: PhantomSpec, rng: np.random.Generator):
    if spec.lesions is not None:
        return [(tuple(float(c) for c in center), float(r)) for center, r in spec.lesions]
    lesions = []
    r_lo, r_hi = spec.radius_range
    for _ in range(spec.num_lesions):
        radius = float(rng.uniform(r_lo, r_hi))
        center = tuple(
            float(rng.uniform(min(radius, (n - 1) / 2), max(n - 1 - radius, (n - 1) / 2)))
            for n in spec.shape
        )
        lesions.append((center, radius))
    return lesions


def build_phantom(spec: PhantomSpec):
    """Generate the case in memory.

    Returns:
        (volumes, mask): map Modality -> VolumeGrid for the emitted subset,
        plus the lesion SegMask (labels 1..N).
    """
    rng = np.random.default_rng(spec.seed)
    grids = np.indices(spec.shape, dtype=np.float64)
    center = [(n - 1) / 2.0 for n in spec.shape]
    max_dist = np.sqrt(sum(c**2 for c in center)) or 1.0
    radial = np.sqrt(sum((grids[a] - center[a]) ** 2 for a in range(3))) / max_dist
    background = 1.0 + 0.2 * (1.0 - radial**2)

    lesions = _draw_lesions(spec, rng)
    mask = np.zeros(spec.shape, dtype=np.int16)
    for index, (c, radius) in enumerate(lesions, start=1):
        dist2 = sum((grids[a] - c[a]) ** 2 for a in range(3))
        inside = dist2 <= radius**2
        mask[inside & (mask == 0)] = index

    lesion_union = mask > 0
    volumes = {}
    for m in spec.modalities:
        vol = background.copy()
        vol[lesion_union] += float(spec.contrast.get(m, DEFAULT_CONTRAST[m]))
        if spec.noise > 0:
            vol += spec.noise * rng.standard_normal(spec.shape)
        volumes[m] = VolumeGrid(vol.astype(np.float32), spec.spacing)
    semantics = {i: f"lesion_{i}" for i in range(1, len(lesions) + 1)}
    return volumes, SegMask(mask, spec.spacing, semantics or None)


def make_phantom(spec: PhantomSpec, out_dir, case_id: str = "case_0000") -> Path:
    """Write a phantom as a case directory; byte-deterministic given seed."""
    volumes, mask = build_phantom(spec)
    case_dir = Path(out_dir) / case_id
    case_dir.mkdir(parents=True, exist_ok=True)
    for m, grid in volumes.items():
        write_volume(case_dir / f"{case_id}_{MODALITY_SUFFIX[m]}.nii.gz", grid.data, grid.spacing)
    write_volume(case_dir / f"{case_id}_seg.nii.gz", mask.data, mask.spacing)
    return case_dir


def make_phantom_family(spec: PhantomSpec, out_dir, count: int, prefix: str = "case") -> list[Path]:
    """Write ``count`` phantoms with per-case seeds derived from the spec seed."""
    from dataclasses import replace

    paths = []
    for i in range(count):
        case_spec = replace(spec, seed=spec.seed + i)
        paths.append(make_phantom(case_spec, out_dir, case_id=f"{prefix}_{i:04d}"))
    return paths
