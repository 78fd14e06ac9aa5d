"""Volume file formats.

``.qvol``
    Raw little-endian float32 voxel block in x-fastest order plus a JSON
    sidecar ``<name>.qvol.json`` holding ``{dims, voxel_size_mm, unit_tag}``.

``.nii``
    Single-file NIfTI-1 restricted to 3D float32 (datatype code 16).  The
    pixdim spacing is honored; anything else is rejected with a clear error.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import VolumeFormatError
from .volume import MaskVolume, Volume3

QVOL_SUFFIX = ".qvol"

_NIFTI_HDR_SIZE = 348
_NIFTI_DT_FLOAT32 = 16


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_qvol(path, v: Volume3) -> Path:
    """Write volume as raw float32 + JSON sidecar; returns the data path."""
    path = Path(path)
    if path.suffix != QVOL_SUFFIX:
        path = path.with_name(path.name + QVOL_SUFFIX)
    raw = np.asarray(v.data.real if np.iscomplexobj(v.data) else v.data, dtype="<f4")
    path.write_bytes(raw.ravel(order="F").tobytes())
    meta = {
        "dims": list(v.dims),
        "voxel_size_mm": list(v.voxel_size_mm),
        "unit_tag": v.unit_tag,
    }
    _sidecar(path).write_text(json.dumps(meta, indent=1) + "\n")
    return path


def read_qvol(path) -> Volume3:
    path = Path(path)
    side = _sidecar(path)
    if not path.exists():
        raise FileNotFoundError(f"missing volume file: {path}")
    if not side.exists():
        raise VolumeFormatError(f"missing .qvol sidecar: {side}")
    meta = json.loads(side.read_text())
    dims = tuple(int(n) for n in meta["dims"])
    vox = tuple(float(x) for x in meta["voxel_size_mm"])
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != np.prod(dims):
        raise VolumeFormatError(
            f"{path}: expected {np.prod(dims)} voxels for dims {dims}, found {raw.size}"
        )
    data = raw.reshape(dims, order="F").astype(np.float64)
    return Volume3(data, vox, meta.get("unit_tag", "dimensionless"))


def write_nifti(path, v: Volume3) -> Path:
    """Write a 3D float32 single-file NIfTI-1 volume (little-endian, sform set)."""
    path = Path(path)
    nx, ny, nz = v.dims
    dx, dy, dz = v.voxel_size_mm
    hdr = bytearray(_NIFTI_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _NIFTI_HDR_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, _NIFTI_DT_FLOAT32)
    struct.pack_into("<h", hdr, 72, 32)  # bitpix
    struct.pack_into("<8f", hdr, 76, 1.0, dx, dy, dz, 0, 0, 0, 0)
    struct.pack_into("<f", hdr, 108, 352.0)  # vox_offset
    struct.pack_into("<f", hdr, 112, 1.0)  # scl_slope
    struct.pack_into("<f", hdr, 116, 0.0)  # scl_inter
    struct.pack_into("<b", hdr, 123, 2)  # xyzt_units: mm
    struct.pack_into("<h", hdr, 254, 1)  # sform_code
    struct.pack_into("<4f", hdr, 280, dx, 0, 0, 0)
    struct.pack_into("<4f", hdr, 296, 0, dy, 0, 0)
    struct.pack_into("<4f", hdr, 312, 0, 0, dz, 0)
    hdr[344:348] = b"n+1\x00"
    raw = np.asarray(v.data, dtype="<f4").ravel(order="F").tobytes()
    path.write_bytes(bytes(hdr) + b"\x00\x00\x00\x00" + raw)
    return path


def read_nifti(path, unit_tag: str = "dimensionless") -> Volume3:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing volume file: {path}")
    blob = path.read_bytes()
    if len(blob) < _NIFTI_HDR_SIZE + 4:
        raise VolumeFormatError(f"{path}: truncated NIfTI header")
    (size,) = struct.unpack_from("<i", blob, 0)
    endian = "<"
    if size != _NIFTI_HDR_SIZE:
        (size,) = struct.unpack_from(">i", blob, 0)
        if size != _NIFTI_HDR_SIZE:
            raise VolumeFormatError(f"{path}: not a NIfTI-1 file")
        endian = ">"
    magic = blob[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise VolumeFormatError(f"{path}: bad NIfTI magic {magic!r}")
    if magic == b"ni1\x00":
        raise VolumeFormatError(f"{path}: two-file NIfTI (.hdr/.img) is not supported")
    dim = struct.unpack_from(endian + "8h", blob, 40)
    if dim[0] != 3:
        raise VolumeFormatError(f"{path}: expected a 3D volume, header says {dim[0]}D")
    (datatype,) = struct.unpack_from(endian + "h", blob, 70)
    if datatype != _NIFTI_DT_FLOAT32:
        raise VolumeFormatError(
            f"{path}: unsupported NIfTI datatype code {datatype}; only float32 (16) is read"
        )
    pixdim = struct.unpack_from(endian + "8f", blob, 76)
    (vox_offset,) = struct.unpack_from(endian + "f", blob, 108)
    (slope,) = struct.unpack_from(endian + "f", blob, 112)
    (inter,) = struct.unpack_from(endian + "f", blob, 116)
    nx, ny, nz = dim[1], dim[2], dim[3]
    off = int(vox_offset)
    raw = np.frombuffer(blob, dtype=endian + "f4", count=nx * ny * nz, offset=off)
    data = raw.reshape((nx, ny, nz), order="F").astype(np.float64)
    if slope not in (0.0, 1.0) or inter != 0.0:
        data = data * (slope if slope != 0.0 else 1.0) + inter
    vox = tuple(abs(float(p)) or 1.0 for p in pixdim[1:4])
    return Volume3(data, vox, unit_tag)


def load_volume(path, unit_tag: str | None = None) -> Volume3:
    """Dispatch on extension (.qvol or .nii)."""
    p = Path(path)
    if p.suffix == QVOL_SUFFIX:
        v = read_qvol(p)
        return v if unit_tag is None else Volume3(v.data, v.voxel_size_mm, unit_tag)
    if p.suffix == ".nii":
        return read_nifti(p, unit_tag or "dimensionless")
    raise VolumeFormatError(f"unknown volume extension: {p.name}")


def save_volume(path, v: Volume3) -> Path:
    p = Path(path)
    if p.suffix == ".nii":
        return write_nifti(p, v)
    return write_qvol(p, v)


def load_mask(path) -> MaskVolume:
    v = load_volume(path)
    return MaskVolume(v.data > 0.5)


def save_mask(path, m: MaskVolume, voxel_size_mm) -> Path:
    return save_volume(path, Volume3(m.data.astype(np.float64), voxel_size_mm))
