"""Minimal NIfTI-1 volume I/O.

Supports single-file ``.nii`` / ``.nii.gz`` volumes: 3D grids (trailing
singleton dimensions are squeezed), little- or big-endian headers,
scl_slope/scl_inter rescaling, and the common scalar dtypes. Voxel data
is interpreted in the file's stored orientation; no reorientation is
performed. Written files use a diagonal sform built from the voxel
spacing and a fixed gzip mtime so identical volumes produce identical
bytes.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptFileError

_HEADER_SIZE = 348
_VOX_OFFSET = 352

# NIfTI-1 datatype code -> numpy dtype
_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}
_DTYPE_CODES = {np.dtype(d): code for code, d in _DTYPES.items()}


def _open_for_read(path: Path):
    raw = open(path, "rb")
    magic = raw.read(2)
    raw.seek(0)
    if magic == b"\x1f\x8b":
        return gzip.GzipFile(fileobj=raw)
    return raw


def read_volume(path) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Read a 3D NIfTI-1 volume.

    Returns:
        (data, spacing): the voxel array in stored orientation and the
        (sx, sy, sz) spacing in mm.

    Raises:
        CorruptFileError: the file is not a parseable 3D NIfTI-1 volume.
    """
    path = Path(path)
    try:
        with _open_for_read(path) as f:
            header = f.read(_HEADER_SIZE)
            if len(header) < _HEADER_SIZE:
                raise CorruptFileError(f"{path}: truncated header")
            endian = "<"
            (sizeof_hdr,) = struct.unpack("<i", header[:4])
            if sizeof_hdr != _HEADER_SIZE:
                endian = ">"
                (sizeof_hdr,) = struct.unpack(">i", header[:4])
                if sizeof_hdr != _HEADER_SIZE:
                    raise CorruptFileError(f"{path}: not a NIfTI-1 file")
            magic = header[344:348]
            if magic not in (b"n+1\x00", b"ni1\x00"):
                raise CorruptFileError(f"{path}: bad NIfTI magic {magic!r}")
            dim = struct.unpack(endian + "8h", header[40:56])
            ndim = dim[0]
            if ndim < 3 or any(d != 1 for d in dim[4 : 1 + ndim]):
                raise CorruptFileError(f"{path}: expected a 3D volume, dim={dim}")
            shape = tuple(int(d) for d in dim[1:4])
            if min(shape) < 1:
                raise CorruptFileError(f"{path}: nonpositive dimension in {shape}")
            (datatype,) = struct.unpack(endian + "h", header[70:72])
            if datatype not in _DTYPES:
                raise CorruptFileError(f"{path}: unsupported datatype code {datatype}")
            pixdim = struct.unpack(endian + "8f", header[76:108])
            spacing = tuple(abs(float(p)) or 1.0 for p in pixdim[1:4])
            (vox_offset,) = struct.unpack(endian + "f", header[108:112])
            slope, inter = struct.unpack(endian + "2f", header[112:120])
            offset = int(vox_offset) if vox_offset >= _HEADER_SIZE else _VOX_OFFSET
            f.read(offset - _HEADER_SIZE)
            dtype = np.dtype(_DTYPES[datatype]).newbyteorder(endian)
            count = int(np.prod(shape))
            buf = f.read(count * dtype.itemsize)
            if len(buf) < count * dtype.itemsize:
                raise CorruptFileError(f"{path}: truncated voxel data")
            data = np.frombuffer(buf, dtype=dtype, count=count).reshape(shape, order="F")
            data = data.astype(dtype.newbyteorder("="))
    except CorruptFileError:
        raise
    except (OSError, struct.error, ValueError) as exc:
        raise CorruptFileError(f"{path}: {exc}") from exc
    if (slope not in (0.0, 1.0)) or inter != 0.0:
        data = data.astype(np.float32) * slope + inter
    return data, spacing


def _build_header(shape, spacing, dtype: np.dtype) -> bytes:
    header = bytearray(_HEADER_SIZE)
    struct.pack_into("<i", header, 0, _HEADER_SIZE)
    struct.pack_into("<8h", header, 40, 3, shape[0], shape[1], shape[2], 1, 1, 1, 1)
    struct.pack_into("<h", header, 70, _DTYPE_CODES[dtype])
    struct.pack_into("<h", header, 72, dtype.itemsize * 8)
    struct.pack_into("<8f", header, 76, 1.0, spacing[0], spacing[1], spacing[2], 0, 0, 0, 0)
    struct.pack_into("<f", header, 108, float(_VOX_OFFSET))
    struct.pack_into("<2f", header, 112, 1.0, 0.0)  # scl_slope, scl_inter
    struct.pack_into("<b", header, 123, 2)  # xyzt_units: mm
    struct.pack_into("<2h", header, 252, 0, 1)  # qform off, sform aligned
    struct.pack_into("<4f", header, 280, spacing[0], 0, 0, 0)
    struct.pack_into("<4f", header, 296, 0, spacing[1], 0, 0)
    struct.pack_into("<4f", header, 312, 0, 0, spacing[2], 0)
    header[344:348] = b"n+1\x00"
    return bytes(header)


def write_volume(path, data: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> None:
    """Write a 3D array as a NIfTI-1 file (gzipped when the name ends in .gz).

    Float arrays are stored as float32, boolean/uint8 as uint8, and other
    integer arrays as the smallest of int16/int32 that holds them.
    """
    path = Path(path)
    data = np.asarray(data)
    if data.ndim != 3:
        raise CorruptFileError(f"can only write 3D volumes, got shape {data.shape}")
    if data.dtype == bool or data.dtype == np.uint8:
        out = data.astype(np.uint8)
    elif np.issubdtype(data.dtype, np.integer):
        info16 = np.iinfo(np.int16)
        fits16 = data.size == 0 or (data.min() >= info16.min and data.max() <= info16.max)
        out = data.astype(np.int16 if fits16 else np.int32)
    else:
        out = data.astype(np.float32)
    spacing = tuple(float(s) for s in spacing)
    payload = _build_header(out.shape, spacing, out.dtype)
    payload += b"\x00\x00\x00\x00"  # no header extensions
    payload += out.tobytes(order="F")
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.name.endswith(".gz"):
        with open(path, "wb") as raw:
            # mtime and filename pinned so identical volumes give
            # byte-identical files
            with gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as f:
                f.write(payload)
    else:
        path.write_bytes(payload)
