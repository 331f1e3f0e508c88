"""Volume container and file I/O.

A volume is a 3D scalar grid indexed [x, y, z] (z = axial/slice axis) with
per-axis voxel spacing in millimetres.

Two on-disk formats are supported:

* NIfTI-1 (``.nii`` / ``.nii.gz``), read-only, spacing taken from the header
  ``pixdim`` field. Only single 3D scalar images are accepted.
* ``VOLR``, the toolkit's raw format: a 64-byte header (magic ``VOLR``,
  version u32, nx/ny/nz u32, spacing 3 x f64, zero padding) followed by
  nx*ny*nz little-endian float32 voxels in x-fastest order.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import MissingSpacing, UnreadableFile

VOLR_MAGIC = b"VOLR"
VOLR_VERSION = 1
VOLR_HEADER_SIZE = 64

# NIfTI-1 datatype codes -> numpy dtypes (unscaled, native endianness applied
# separately from the header's sizeof_hdr probe)
_NIFTI_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}


@dataclass
class Volume:
    """3D scalar grid plus voxel spacing in mm; indexed [x, y, z]."""

    voxels: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3:
            raise UnreadableFile(f"volume must be 3D, got ndim={self.voxels.ndim}")
        if min(self.voxels.shape) < 1:
            raise UnreadableFile(f"degenerate volume shape {self.voxels.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise MissingSpacing(f"spacing must be 3 positive values, got {self.spacing}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape

    def copy(self) -> "Volume":
        return Volume(self.voxels.copy(), self.spacing)


def save_volume(vol: Volume, path: str | os.PathLike) -> None:
    """Write a volume in VOLR format (voxels stored as little-endian f32)."""
    nx, ny, nz = vol.shape
    header = struct.pack("<4sI3I3d", VOLR_MAGIC, VOLR_VERSION, nx, ny, nz, *vol.spacing)
    header += b"\x00" * (VOLR_HEADER_SIZE - len(header))
    data = np.ascontiguousarray(vol.voxels.astype("<f4"))
    with open(path, "wb") as fh:
        fh.write(header)
        # x-fastest order == Fortran raveling of the [x, y, z] array
        fh.write(data.ravel(order="F").tobytes())


def _load_volr(path: str | os.PathLike) -> Volume:
    with open(path, "rb") as fh:
        header = fh.read(VOLR_HEADER_SIZE)
        if len(header) < VOLR_HEADER_SIZE:
            raise UnreadableFile(f"{path}: truncated VOLR header")
        magic, version, nx, ny, nz, sx, sy, sz = struct.unpack("<4sI3I3d", header[:44])
        if magic != VOLR_MAGIC:
            raise UnreadableFile(f"{path}: bad magic {magic!r}")
        if version != VOLR_VERSION:
            raise UnreadableFile(f"{path}: unsupported VOLR version {version}")
        if min(nx, ny, nz) < 1:
            raise UnreadableFile(f"{path}: invalid shape ({nx},{ny},{nz})")
        if min(sx, sy, sz) <= 0 or not all(np.isfinite([sx, sy, sz])):
            raise MissingSpacing(f"{path}: invalid spacing ({sx},{sy},{sz})")
        raw = fh.read(nx * ny * nz * 4)
    if len(raw) < nx * ny * nz * 4:
        raise UnreadableFile(f"{path}: truncated voxel data")
    voxels = np.frombuffer(raw, dtype="<f4").reshape((nx, ny, nz), order="F")
    return Volume(voxels.copy(), (sx, sy, sz))


def _load_nifti(path: str | os.PathLike) -> Volume:
    opener = gzip.open if str(path).endswith(".gz") else open
    try:
        with opener(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    if len(blob) < 348:
        raise UnreadableFile(f"{path}: shorter than a NIfTI-1 header")

    # sizeof_hdr doubles as the byte-order probe
    (sizeof_hdr,) = struct.unpack("<i", blob[0:4])
    bo = "<"
    if sizeof_hdr != 348:
        (sizeof_hdr,) = struct.unpack(">i", blob[0:4])
        bo = ">"
        if sizeof_hdr != 348:
            raise UnreadableFile(f"{path}: not a NIfTI-1 file")

    dim = struct.unpack(bo + "8h", blob[40:56])
    datatype, _bitpix = struct.unpack(bo + "2h", blob[70:74])
    pixdim = struct.unpack(bo + "8f", blob[76:108])
    (vox_offset,) = struct.unpack(bo + "f", blob[108:112])
    scl_slope, scl_inter = struct.unpack(bo + "2f", blob[112:120])
    magic = blob[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise UnreadableFile(f"{path}: bad NIfTI magic {magic!r}")
    if magic == b"ni1\x00":
        raise UnreadableFile(f"{path}: two-file (.hdr/.img) NIfTI is not supported")

    ndim = dim[0]
    if ndim < 3 or any(d > 1 for d in dim[4:4 + max(0, ndim - 3)]):
        raise UnreadableFile(f"{path}: expected a single 3D image, dim={dim}")
    nx, ny, nz = (int(d) for d in dim[1:4])
    if min(nx, ny, nz) < 1:
        raise UnreadableFile(f"{path}: invalid dim {dim[1:4]}")

    spacing = tuple(float(p) for p in pixdim[1:4])
    if any((not np.isfinite(s)) or s <= 0 for s in spacing):
        raise MissingSpacing(f"{path}: pixdim {spacing} carries no usable spacing")

    if datatype not in _NIFTI_DTYPES:
        raise UnreadableFile(f"{path}: unsupported NIfTI datatype code {datatype}")
    dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(bo)

    offset = int(vox_offset)
    count = nx * ny * nz
    data = blob[offset:offset + count * dtype.itemsize]
    if len(data) < count * dtype.itemsize:
        raise UnreadableFile(f"{path}: truncated voxel data")
    voxels = np.frombuffer(data, dtype=dtype).reshape((nx, ny, nz), order="F")
    voxels = voxels.astype(np.float64)
    if scl_slope not in (0.0,) and np.isfinite(scl_slope):
        if scl_slope != 1.0 or scl_inter != 0.0:
            voxels = voxels * scl_slope + scl_inter
    if not np.all(np.isfinite(voxels)):
        raise UnreadableFile(f"{path}: volume contains non-finite voxels")
    return Volume(voxels, spacing)


def save_nifti(vol: Volume, path: str | os.PathLike) -> None:
    """Write a minimal single-file NIfTI-1 image (float32, used for fixtures)."""
    nx, ny, nz = vol.shape
    header = bytearray(348)
    struct.pack_into("<i", header, 0, 348)
    struct.pack_into("<8h", header, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<2h", header, 70, 16, 32)  # float32
    struct.pack_into("<8f", header, 76, 1.0, *vol.spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", header, 108, 352.0)  # vox_offset
    struct.pack_into("<2f", header, 112, 1.0, 0.0)  # scl_slope/inter
    header[344:348] = b"n+1\x00"
    with open(path, "wb") as fh:
        fh.write(bytes(header))
        fh.write(b"\x00" * 4)  # extension flag
        fh.write(vol.voxels.astype("<f4").ravel(order="F").tobytes())


def load_volume(path: str | os.PathLike) -> Volume:
    """Load a volume from NIfTI (.nii/.nii.gz) or VOLR, dispatching on content."""
    if not os.path.isfile(path):
        raise UnreadableFile(f"{path}: no such file")
    name = str(path)
    if name.endswith(".nii") or name.endswith(".nii.gz"):
        return _load_nifti(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == VOLR_MAGIC:
        return _load_volr(path)
    # fall back on NIfTI sniffing for unrecognised extensions
    try:
        return _load_nifti(path)
    except UnreadableFile:
        raise UnreadableFile(f"{path}: not a supported volume format (NIfTI or VOLR)")
