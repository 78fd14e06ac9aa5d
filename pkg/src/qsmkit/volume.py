"""3D volume container, FFT contract, k-space grids, masking and rotation.

Conventions used throughout the toolkit:

* volumes are ``(nx, ny, nz)`` arrays; serialized layouts are x-fastest
  (Fortran order), matching NIfTI-1;
* FFTs are unnormalized forward / ``1/N`` inverse (the numpy convention);
* rotations act about the geometric center of the field of view in mm,
  ``out(x) = v(c + R (x - c))``, with trilinear interpolation and a
  constant fill value outside the source FOV.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as _fft
from scipy import ndimage

from .errors import DimensionMismatchError, EmptyMaskError, InvalidRotationError

UNIT_TAGS = ("ppm", "radians", "hz", "dimensionless")

_ROT_TOL = 1e-6


def _fft_workers() -> int:
    try:
        return max(1, int(os.environ.get("QSM_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True, eq=False)
class Volume3:
    """A scalar 3D grid with voxel spacing and a unit tag.

    ``data`` is float64 for maps and complex128 for spectra; every public
    operation in the toolkit returns finite values only, which is enforced
    here on construction.
    """

    data: np.ndarray
    voxel_size_mm: tuple[float, float, float]
    unit_tag: str = "dimensionless"

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype.kind == "c":
            arr = arr.astype(np.complex128, copy=False)
        else:
            arr = arr.astype(np.float64, copy=False)
        if arr.ndim != 3:
            raise DimensionMismatchError(f"expected a 3D array, got shape {arr.shape}")
        vox = tuple(float(v) for v in self.voxel_size_mm)
        if len(vox) != 3 or any(v <= 0 for v in vox):
            raise ValueError(f"voxel sizes must be three positive reals, got {vox}")
        if self.unit_tag not in UNIT_TAGS:
            raise ValueError(f"unknown unit tag {self.unit_tag!r}, expected one of {UNIT_TAGS}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("volume contains NaN or Inf")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "voxel_size_mm", vox)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray, unit_tag: str | None = None) -> "Volume3":
        """New volume on the same grid."""
        return Volume3(data, self.voxel_size_mm, unit_tag or self.unit_tag)


# Tagged map aliases: a field map is a Volume3 in ppm (the relative offset
# ΔB/B0 × 1e6), a susceptibility map is a Volume3 in ppm as well.  Acquisition
# context (TE, B0) travels in CLI manifests, not in the container.
FieldMap = Volume3
SusceptibilityMap = Volume3


@dataclass(frozen=True, eq=False)
class MaskVolume:
    """Boolean gate over a Volume3 grid."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise DimensionMismatchError(f"expected a 3D mask, got shape {arr.shape}")
        object.__setattr__(self, "data", arr.astype(bool, copy=False))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def count(self) -> int:
        return int(self.data.sum())

    def require_nonempty(self) -> None:
        if not self.data.any():
            raise EmptyMaskError("mask has no true voxel")

    def __and__(self, other: "MaskVolume") -> "MaskVolume":
        _check_same_dims(self, other)
        return MaskVolume(self.data & other.data)


@dataclass(frozen=True, eq=False)
class RotationMatrix:
    """Proper rotation, validated to 1e-6 (orthonormal, det +1)."""

    mat: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mat, dtype=np.float64)
        if m.shape != (3, 3):
            raise InvalidRotationError(f"rotation must be 3x3, got {m.shape}")
        if not np.allclose(m.T @ m, np.eye(3), atol=_ROT_TOL):
            raise InvalidRotationError("matrix is not orthonormal within 1e-6")
        if abs(np.linalg.det(m) - 1.0) > _ROT_TOL:
            raise InvalidRotationError("matrix determinant is not +1 within 1e-6")
        object.__setattr__(self, "mat", m)

    @classmethod
    def identity(cls) -> "RotationMatrix":
        return cls(np.eye(3))

    @classmethod
    def about_axis(cls, axis: str, degrees: float) -> "RotationMatrix":
        t = np.deg2rad(degrees)
        c, s = np.cos(t), np.sin(t)
        if axis == "x":
            m = [[1, 0, 0], [0, c, -s], [0, s, c]]
        elif axis == "y":
            m = [[c, 0, s], [0, 1, 0], [-s, 0, c]]
        elif axis == "z":
            m = [[c, -s, 0], [s, c, 0], [0, 0, 1]]
        else:
            raise InvalidRotationError(f"unknown axis {axis!r}")
        return cls(np.array(m, dtype=np.float64))

    @property
    def T(self) -> "RotationMatrix":
        return RotationMatrix(self.mat.T)

    def is_identity(self) -> bool:
        return np.array_equal(self.mat, np.eye(3))


@dataclass(frozen=True, eq=False)
class KGrid:
    """Per-axis spatial frequencies in cycles/mm, DC at index 0, FFT wraparound order."""

    kx: np.ndarray
    ky: np.ndarray
    kz: np.ndarray
    voxel_size_mm: tuple[float, float, float] = field(default=(1.0, 1.0, 1.0))

    @property
    def dims(self) -> tuple[int, int, int]:
        return (len(self.kx), len(self.ky), len(self.kz))

    def component(self, axis: int) -> np.ndarray:
        """Broadcastable 3D view of one k component."""
        k = (self.kx, self.ky, self.kz)[axis]
        shape = [1, 1, 1]
        shape[axis] = len(k)
        return k.reshape(shape)

    def squared_norm(self) -> np.ndarray:
        """|k|^2 on the full grid."""
        return sum(self.component(a) ** 2 for a in range(3))

    def dot(self, vec) -> np.ndarray:
        """k . vec on the full grid."""
        v = np.asarray(vec, dtype=np.float64)
        return sum(self.component(a) * v[a] for a in range(3))


def make_kgrid(dims, voxel_size_mm) -> KGrid:
    """Frequency grid with ``k[i] = i/(n*d)`` below Nyquist, wrapped negative above."""
    dims = tuple(int(n) for n in dims)
    vox = tuple(float(v) for v in voxel_size_mm)
    if any(n <= 0 for n in dims) or any(v <= 0 for v in vox):
        raise ValueError("dims and voxel sizes must be positive")
    kx, ky, kz = (np.fft.fftfreq(n, d=v) for n, v in zip(dims, vox))
    return KGrid(kx, ky, kz, vox)


def _check_same_dims(a, b) -> None:
    if a.dims != b.dims:
        raise DimensionMismatchError(f"grid mismatch: {a.dims} vs {b.dims}")


def fft3(v: Volume3) -> Volume3:
    """Unnormalized forward 3D FFT; inverse is ifft3 (1/N normalized)."""
    if any(n < 2 for n in v.dims):
        raise DimensionMismatchError(f"fft3 needs >= 2 samples per axis, got {v.dims}")
    return v.with_data(_fft.fftn(v.data, workers=_fft_workers()))


def ifft3(v: Volume3) -> Volume3:
    """Inverse of fft3; ifft3(fft3(v)) reproduces v to ~1e-15."""
    if any(n < 2 for n in v.dims):
        raise DimensionMismatchError(f"ifft3 needs >= 2 samples per axis, got {v.dims}")
    return v.with_data(_fft.ifftn(v.data, workers=_fft_workers()))


def _fov_center_idx(dims) -> np.ndarray:
    # geometric FOV center expressed in index coordinates (voxel centers at i*d)
    return (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0


def _resample_array(data: np.ndarray, voxel, R: RotationMatrix, fill: float, order: int = 1):
    scale = np.asarray(voxel, dtype=np.float64)
    m = (R.mat * scale[None, :]) / scale[:, None]
    c = _fov_center_idx(data.shape)
    offset = c - m @ c
    return ndimage.affine_transform(
        data, m, offset=offset, order=order, mode="constant", cval=fill
    )


def resample_rotated(v: Volume3, R: RotationMatrix, fill: float = 0.0) -> Volume3:
    """Rotate a volume about the FOV center: ``out(x) = v(c + R (x - c))`` in mm.

    Trilinear interpolation; samples falling outside the source FOV take
    ``fill``.  The identity rotation returns a bit-exact copy.
    """
    if not isinstance(R, RotationMatrix):
        R = RotationMatrix(np.asarray(R))
    if R.is_identity():
        return v.with_data(v.data.copy())
    if np.iscomplexobj(v.data):
        raise ValueError("resample_rotated expects a real volume")
    return v.with_data(_resample_array(v.data, v.voxel_size_mm, R, float(fill)))


def resample_rotated_mask(m: MaskVolume, R: RotationMatrix, voxel_size_mm) -> MaskVolume:
    """Rotate a mask (trilinear on 0/1, re-thresholded at 0.5)."""
    if not isinstance(R, RotationMatrix):
        R = RotationMatrix(np.asarray(R))
    if R.is_identity():
        return MaskVolume(m.data.copy())
    r = _resample_array(m.data.astype(np.float64), voxel_size_mm, R, 0.0)
    return MaskVolume(r > 0.5)


def apply_mask(v: Volume3, m: MaskVolume) -> Volume3:
    """Zero the volume outside the mask."""
    _check_same_dims(v, m)
    return v.with_data(np.where(m.data, v.data, 0.0))


def mask_mean(v: Volume3, m: MaskVolume) -> float:
    m.require_nonempty()
    _check_same_dims(v, m)
    return float(v.data[m.data].mean())


def mean_referenced(v: Volume3, m: MaskVolume) -> Volume3:
    """Masked volume with zero mean inside the mask."""
    mu = mask_mean(v, m)
    return v.with_data(np.where(m.data, v.data - mu, 0.0))


def forward_diff(a: np.ndarray, axis: int) -> np.ndarray:
    """Forward difference along one axis; the last plane is 0."""
    g = np.zeros_like(a)
    to = [slice(None)] * a.ndim
    frm = [slice(None)] * a.ndim
    to[axis] = slice(0, -1)
    frm[axis] = slice(1, None)
    g[tuple(to)] = a[tuple(frm)] - a[tuple(to)]
    return g


def forward_diff_adjoint(a: np.ndarray, axis: int) -> np.ndarray:
    """Adjoint of forward_diff (negative backward difference)."""
    g = np.zeros_like(a)
    head = [slice(None)] * a.ndim
    head[axis] = slice(0, -1)
    tail = [slice(None)] * a.ndim
    tail[axis] = slice(1, None)
    g[tuple(head)] = -a[tuple(head)]
    g[tuple(tail)] += a[tuple(head)]
    return g
