"""Phase preprocessing: Laplacian unwrapping and V-SHARP background removal.

Unwrapping solves ``L phi = cos(pw) L sin(pw) - sin(pw) L cos(pw)`` where
``L`` is the 7-point discrete Laplacian under mirror (Neumann) boundary
conditions; the Poisson solve is exact via DCT-II, which is the
half-sample-symmetric FFT, with the DC term pinned to zero.

Background removal composes spherical-mean-value high-pass filters of
decreasing radius (largest valid radius per voxel) and deconvolves the
largest-radius filter by truncated k-space division.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as _fft

from .errors import ConfigError, MaskTooSmallError
from .volume import MaskVolume, Volume3, _check_same_dims, _fft_workers


@dataclass(frozen=True)
class VSharpConfig:
    """Sphere radii (mm, strictly descending) and the TSVD cutoff."""

    radii_mm: tuple[float, ...] = tuple(float(r) for r in range(10, 0, -1))
    tsvd_threshold: float = 0.05

    def __post_init__(self):
        r = tuple(float(x) for x in self.radii_mm)
        if not r:
            raise ConfigError("radii_mm must be nonempty")
        if any(b >= a for a, b in zip(r, r[1:])):
            raise ConfigError("radii_mm must be strictly descending")
        if r[-1] <= 0:
            raise ConfigError("radii must be positive")
        if not 0.0 < self.tsvd_threshold < 1.0:
            raise ConfigError("tsvd_threshold must lie in (0, 1)")
        object.__setattr__(self, "radii_mm", r)


def wrap_phase(phi: np.ndarray) -> np.ndarray:
    """Wrap to [-pi, pi)."""
    return np.mod(phi + np.pi, 2.0 * np.pi) - np.pi


def _laplacian_reflect(a: np.ndarray, voxel) -> np.ndarray:
    out = np.zeros_like(a)
    for ax, d in enumerate(voxel):
        n = a.shape[ax]
        fwd = np.take(a, np.r_[1:n, n - 1], axis=ax)
        bwd = np.take(a, np.r_[0, 0:n - 1], axis=ax)
        out += (fwd + bwd - 2.0 * a) / d ** 2
    return out


def _laplacian_eigenvalues(dims, voxel) -> np.ndarray:
    lam = np.zeros(dims)
    for ax, (n, d) in enumerate(zip(dims, voxel)):
        j = np.arange(n)
        l1 = 2.0 * (np.cos(np.pi * j / n) - 1.0) / d ** 2
        shape = [1, 1, 1]
        shape[ax] = n
        lam = lam + l1.reshape(shape)
    return lam


def _poisson_solve_neumann(rhs: np.ndarray, voxel) -> np.ndarray:
    # exact solve of the mirror-BC discrete Poisson problem; DC -> 0
    lam = _laplacian_eigenvalues(rhs.shape, voxel)
    w = _fft_workers()
    c = _fft.dctn(rhs, type=2, norm="ortho", workers=w)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(np.abs(lam) > 1e-300, c / lam, 0.0)
    c.flat[0] = 0.0
    return _fft.idctn(c, type=2, norm="ortho", workers=w)


def laplacian_unwrap(wrapped: Volume3, mask: MaskVolume) -> Volume3:
    """Unwrap a phase volume; the result is mean-free inside the mask.

    Harmonic components that the Laplacian cannot see are recovered through
    the boundary data of the mirror extension; residuals are third order in
    the per-voxel phase step.
    """
    if wrapped.unit_tag != "radians":
        raise ValueError(f"expected radians, got unit {wrapped.unit_tag!r}")
    _check_same_dims(wrapped, mask)
    mask.require_nonempty()
    p = wrapped.data
    s, c = np.sin(p), np.cos(p)
    rhs = c * _laplacian_reflect(s, wrapped.voxel_size_mm) \
        - s * _laplacian_reflect(c, wrapped.voxel_size_mm)
    phi = _poisson_solve_neumann(rhs, wrapped.voxel_size_mm)
    phi -= phi[mask.data].mean()
    return wrapped.with_data(phi)


def smv_kernel_fft(dims, voxel_size_mm, radius_mm: float) -> np.ndarray:
    """FFT of the unit-sum rasterized sphere kernel centered at the origin."""
    offs = [np.fft.fftfreq(n) * n * d for n, d in zip(dims, voxel_size_mm)]
    OX = offs[0][:, None, None]
    OY = offs[1][None, :, None]
    OZ = offs[2][None, None, :]
    ball = (OX ** 2 + OY ** 2 + OZ ** 2) <= radius_mm ** 2
    total = ball.sum()
    if total == 0:
        raise ConfigError(f"SMV radius {radius_mm} mm is below one voxel")
    w = _fft_workers()
    return _fft.fftn(ball / float(total), workers=w)


def _erode_with_ball(mask: np.ndarray, ball_fft: np.ndarray) -> np.ndarray:
    # mask eroded by the ball support: voxels whose sphere mean stays 1
    w = _fft_workers()
    conv = _fft.ifftn(_fft.fftn(mask.astype(np.float64), workers=w) * ball_fft, workers=w).real
    return conv > 1.0 - 1e-6


def erode_mask(mask: MaskVolume, voxel_size_mm, radius_mm: float) -> MaskVolume:
    """Mask eroded by a rasterized sphere of the given radius."""
    ball = smv_kernel_fft(mask.dims, voxel_size_mm, radius_mm)
    return MaskVolume(_erode_with_ball(mask.data, ball))


def vsharp(field: Volume3, mask: MaskVolume, cfg: VSharpConfig | None = None):
    """Remove the harmonic background field inside a mask.

    Returns ``(local_field, eroded_mask)``.  Each voxel is filtered with
    ``delta - SMV_r`` at the largest radius whose sphere fits inside the
    mask there; the largest-radius filter is then deconvolved by truncated
    k-space division and the result is masked and mean-referenced on the
    returned mask (input mask eroded by the smallest radius).
    """
    cfg = cfg or VSharpConfig()
    _check_same_dims(field, mask)
    mask.require_nonempty()
    if np.iscomplexobj(field.data):
        raise ValueError("vsharp expects a real field map")
    dims = field.dims
    vox = field.voxel_size_mm
    if cfg.radii_mm[-1] < min(vox):
        raise ConfigError(
            f"smallest SMV radius {cfg.radii_mm[-1]} mm is below one voxel "
            f"({min(vox)} mm)")
    w = _fft_workers()
    fhat = _fft.fftn(field.data, workers=w)

    composed = np.zeros(dims)
    assigned = np.zeros(dims, dtype=bool)
    hmax_fft = None
    valid = None
    for i, radius in enumerate(cfg.radii_mm):
        ball = smv_kernel_fft(dims, vox, radius)
        if i == 0:
            hmax_fft = 1.0 - ball
        valid = _erode_with_ball(mask.data, ball)
        highpass = _fft.ifftn(fhat * (1.0 - ball), workers=w).real
        newly = valid & ~assigned
        composed[newly] = highpass[newly]
        assigned |= newly

    if not valid.any():
        raise MaskTooSmallError(
            f"mask cannot fit the smallest SMV radius ({cfg.radii_mm[-1]} mm)"
        )
    eroded = MaskVolume(valid)

    mag = np.abs(hmax_fft)
    inv = np.zeros_like(hmax_fft)
    good = mag >= cfg.tsvd_threshold
    inv[good] = 1.0 / hmax_fft[good]
    out = _fft.ifftn(_fft.fftn(composed, workers=w) * inv, workers=w).real
    out[~eroded.data] = 0.0
    out -= out[eroded.data].mean()
    out[~eroded.data] = 0.0
    return field.with_data(out, "ppm" if field.unit_tag == "ppm" else field.unit_tag), eroded
