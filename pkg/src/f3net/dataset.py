"""Case-directory ingestion.

Layout: ``{root}/{case_id}/{case_id}_{suffix}.nii.gz`` with suffix in
{t1, t1gd, t2, flair, dwi, adc}; absent files mean absent modalities.
Optional ``{case_id}_seg.nii.gz`` (label) and ``{case_id}_wmh.nii.gz``.

When the ``F3NET_CACHE`` environment variable points at a directory,
normalized cases are cached there as ``.npz`` archives keyed by the
source files' names, sizes, and modification times, so repeated loads
skip the NIfTI parsing and normalization work.
"""

from __future__ import annotations

import hashlib
import os
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import LayoutError
from .nifti import read_volume
from .pathoseg import SegMask
from .volumes import (
    MODALITY_SUFFIX,
    Modality,
    ModalityPresence,
    MultiModalCase,
    VolumeGrid,
    normalize_case,
    synthesize_zero_images,
)

CACHE_ENV_VAR = "F3NET_CACHE"


def _find_file(case_dir: Path, case_id: str, suffix: str) -> Optional[Path]:
    for ext in (".nii.gz", ".nii"):
        path = case_dir / f"{case_id}_{suffix}{ext}"
        if path.exists():
            return path
    return None


def _source_files(case_dir: Path, case_id: str) -> list[Path]:
    suffixes = list(MODALITY_SUFFIX.values()) + ["seg"]
    found = [_find_file(case_dir, case_id, s) for s in suffixes]
    return [p for p in found if p is not None]


def _cache_file(case_dir: Path, sources: list[Path]) -> Optional[Path]:
    cache_root = os.environ.get(CACHE_ENV_VAR)
    if not cache_root:
        return None
    stamp = [(p.name, p.stat().st_size, p.stat().st_mtime_ns) for p in sources]
    key = hashlib.sha256(repr((str(case_dir.resolve()), stamp)).encode()).hexdigest()[:24]
    return Path(cache_root) / f"{case_dir.name}-{key}.npz"


def _read_cached_case(path: Path, case_id: str) -> MultiModalCase:
    with np.load(path, allow_pickle=False) as archive:
        stack = archive["stack"]
        presence = archive["presence"]
        spacing = tuple(float(s) for s in archive["spacing"])
        label_data = archive["label"] if "label" in archive.files else None
    volumes = tuple(VolumeGrid(stack[i], spacing) for i in range(stack.shape[0]))
    label = SegMask(label_data, spacing) if label_data is not None else None
    return MultiModalCase(case_id, volumes, ModalityPresence(tuple(bool(p) for p in presence)), label)


def _write_cached_case(path: Path, case: MultiModalCase) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        "stack": case.stack(),
        "presence": case.presence.as_array(),
        "spacing": np.array(case.spacing, dtype=np.float64),
    }
    if case.label is not None:
        arrays["label"] = case.label.data
    np.savez(path, **arrays)


def load_case(case_dir, normalize: bool = True) -> MultiModalCase:
    """Load a case directory into a synthesized, normalized case.

    Raises:
        LayoutError: missing directory or no modality files.
        GeometryMismatchError: modalities disagree on shape/spacing.
        CorruptFileError: a volume fails to parse.
    """
    case_dir = Path(case_dir)
    if not case_dir.is_dir():
        raise LayoutError(f"{case_dir} is not a case directory")
    case_id = case_dir.name
    sources = _source_files(case_dir, case_id)
    if not sources:
        raise LayoutError(f"{case_dir} contains no modality files ({case_id}_<modality>.nii[.gz])")
    cache_path = _cache_file(case_dir, sources) if normalize else None
    if cache_path is not None and cache_path.exists():
        return _read_cached_case(cache_path, case_id)
    raw = {}
    for m in Modality:
        path = _find_file(case_dir, case_id, MODALITY_SUFFIX[m])
        if path is not None:
            data, spacing = read_volume(path)
            raw[m] = VolumeGrid(data, spacing)
    if not raw:
        raise LayoutError(f"{case_dir} contains no modality files ({case_id}_<modality>.nii[.gz])")
    label = None
    seg_path = _find_file(case_dir, case_id, "seg")
    if seg_path is not None:
        data, spacing = read_volume(seg_path)
        label = SegMask(data, spacing)
    case = synthesize_zero_images(raw, case_id=case_id, label=label)
    if normalize:
        case = normalize_case(case)
        if cache_path is not None:
            _write_cached_case(cache_path, case)
    return case


def load_wmh(case_dir) -> Optional[SegMask]:
    """Load the optional WMH mask of a case, if present."""
    case_dir = Path(case_dir)
    path = _find_file(case_dir, case_dir.name, "wmh")
    if path is None:
        return None
    data, spacing = read_volume(path)
    return SegMask(data, spacing)


def list_case_dirs(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise LayoutError(f"{root} is not a dataset directory")
    dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not dirs:
        raise LayoutError(f"{root} contains no case directories")
    return dirs


def load_dataset(root, normalize: bool = True) -> list[MultiModalCase]:
    return [load_case(d, normalize=normalize) for d in list_case_dirs(root)]
