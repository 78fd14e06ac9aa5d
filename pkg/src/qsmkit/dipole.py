"""K-space dipole kernel and the susceptibility -> field forward model.

The kernel is ``D(k) = 1/3 - (k.b)^2/|k|^2`` for a unit field direction
``b``, the Lorentz-corrected single-dipole response.  Its zeros lie on the
magic-angle cone ``cos^2(theta) = 1/3``, which is what makes the inverse
problem ill-conditioned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as _fft

from .errors import DimensionMismatchError
from .volume import RotationMatrix, Volume3, _check_same_dims, _fft_workers, make_kgrid

# reduced gyromagnetic ratio of the proton, MHz/T
GAMMA_BAR_MHZ_PER_T = 42.577


@dataclass(frozen=True, eq=False)
class DipoleKernel:
    """Real k-space dipole response on a grid, DC pinned to ``dc_value``."""

    data: np.ndarray
    voxel_size_mm: tuple[float, float, float]
    b0_dir: tuple[float, float, float]
    dc_value: float = 0.0

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


def _conjugate_symmetrize(d: np.ndarray) -> np.ndarray:
    # The sampled kernel must satisfy D[-i mod n] = D[i] exactly, or real
    # fields pick up imaginary leakage on the Nyquist planes for oblique b0
    # (the Nyquist frequency is sign-ambiguous).  Averaging the two sign
    # interpretations restores the symmetry; axis-aligned kernels are
    # unchanged.
    neg = tuple((-np.arange(n)) % n for n in d.shape)
    return 0.5 * (d + d[np.ix_(*neg)])


def dipole_kernel(dims, voxel_size_mm, b0_dir, dc_value: float = 0.0) -> DipoleKernel:
    """Dipole response sampled on the FFT frequency grid.

    ``b0_dir`` is normalized internally; the value at k=0 is unobservable
    from a local field and is pinned to ``dc_value`` (0 by default, which
    makes every inversion mean-free).
    """
    b0 = np.asarray(b0_dir, dtype=np.float64)
    norm = np.linalg.norm(b0)
    if norm == 0:
        raise ValueError("b0_dir must be nonzero")
    b0 = b0 / norm
    kg = make_kgrid(dims, voxel_size_mm)
    k2 = kg.squared_norm()
    kb = kg.dot(b0)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = 1.0 / 3.0 - np.square(kb) / k2
    d[0, 0, 0] = float(dc_value)
    d = _conjugate_symmetrize(d)
    d[0, 0, 0] = float(dc_value)
    return DipoleKernel(d, tuple(float(v) for v in voxel_size_mm), tuple(b0), float(dc_value))


def rotated_kernel(dims, voxel_size_mm, R: RotationMatrix, dc_value: float = 0.0) -> DipoleKernel:
    """Kernel for a head orientation R: the effective field direction in the
    object frame is ``R^T z``."""
    if not isinstance(R, RotationMatrix):
        R = RotationMatrix(np.asarray(R))
    b0 = R.mat.T @ np.array([0.0, 0.0, 1.0])
    return dipole_kernel(dims, voxel_size_mm, b0, dc_value=dc_value)


def kernel_to_volume(kernel: DipoleKernel) -> Volume3:
    """Kernel as an inspectable volume (unit_tag=dimensionless)."""
    return Volume3(kernel.data, kernel.voxel_size_mm, "dimensionless")


def kernel_from_volume(v: Volume3, b0_dir=(0.0, 0.0, 1.0)) -> DipoleKernel:
    return DipoleKernel(v.data, v.voxel_size_mm, tuple(float(x) for x in b0_dir),
                        float(v.data[0, 0, 0]))


def convolve_kernel(data: np.ndarray, kernel: DipoleKernel) -> np.ndarray:
    """Apply the dipole convolution to a real array (FFT multiply, real part)."""
    if data.shape != kernel.dims:
        raise DimensionMismatchError(f"grid mismatch: {data.shape} vs {kernel.dims}")
    w = _fft_workers()
    return _fft.ifftn(kernel.data * _fft.fftn(data, workers=w), workers=w).real


def forward_field(chi: Volume3, kernel: DipoleKernel) -> Volume3:
    """Local field (ppm) generated by a susceptibility map (ppm)."""
    _check_same_dims(chi, kernel)
    return Volume3(convolve_kernel(chi.data, kernel), chi.voxel_size_mm, "ppm")


def _rad_per_ppm(te_s: float, b0_t: float) -> float:
    if te_s <= 0 or b0_t <= 0:
        raise ValueError("TE and B0 must be positive")
    return 2.0 * np.pi * GAMMA_BAR_MHZ_PER_T * 1e6 * b0_t * te_s * 1e-6


def field_from_phase(phase: Volume3, te_s: float, b0_t: float) -> Volume3:
    """Convert an unwrapped GRE phase (radians) to a relative field map (ppm)."""
    if phase.unit_tag != "radians":
        raise ValueError(f"expected a radians volume, got unit {phase.unit_tag!r}")
    return Volume3(phase.data / _rad_per_ppm(te_s, b0_t), phase.voxel_size_mm, "ppm")


def phase_from_field(field: Volume3, te_s: float, b0_t: float) -> Volume3:
    """Inverse of field_from_phase (unwrapped phase, radians)."""
    if field.unit_tag != "ppm":
        raise ValueError(f"expected a ppm volume, got unit {field.unit_tag!r}")
    return Volume3(field.data * _rad_per_ppm(te_s, b0_t), field.voxel_size_mm, "radians")
