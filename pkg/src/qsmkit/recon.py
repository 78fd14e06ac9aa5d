"""Classical dipole inversions: TKD, COSMOS, and an edge-weighted
regularized inversion in the spirit of morphology-enabled methods.

All three return masked, mean-referenced susceptibility maps (the mean
susceptibility is unobservable from a local field, so maps are referenced
to zero mean inside the mask).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as _fft

from .dipole import DipoleKernel, convolve_kernel, rotated_kernel
from .errors import ConfigError, ConvergenceError, DimensionMismatchError
from .volume import (
    MaskVolume,
    RotationMatrix,
    Volume3,
    _check_same_dims,
    _fft_workers,
    forward_diff,
    forward_diff_adjoint,
    mean_referenced,
)


@dataclass(frozen=True, eq=False)
class OrientationScan:
    """One head orientation: registered local field, rotation, brain mask."""

    field: Volume3
    rotation: RotationMatrix
    mask: MaskVolume

    def __post_init__(self):
        _check_same_dims(self.field, self.mask)


@dataclass(frozen=True)
class TkdConfig:
    """Cap on |1/D|; the default 5 truncates wherever |D| < 0.2."""

    inverse_cap: float = 5.0

    def __post_init__(self):
        if self.inverse_cap <= 0:
            raise ConfigError("inverse_cap must be positive")


@dataclass(frozen=True)
class MediConfig:
    """Edge-weighted regularized inversion parameters.

    ``lam`` weighs the smoothed-L1 gradient penalty; ``edge_fraction`` is
    the fraction of in-mask voxels (per gradient direction) excluded from
    the penalty as magnitude edges.
    """

    lam: float = 5e-4
    max_iters: int = 10
    cg_iters: int = 50
    smooth_eps: float = 1e-6
    edge_fraction: float = 0.3

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError("lam must be positive")
        if self.max_iters < 1 or self.cg_iters < 1:
            raise ConfigError("iteration counts must be >= 1")
        if self.smooth_eps <= 0:
            raise ConfigError("smooth_eps must be positive")
        if not 0.0 < self.edge_fraction < 1.0:
            raise ConfigError("edge_fraction must lie in (0, 1)")


def tkd(field: Volume3, kernel: DipoleKernel, cfg: TkdConfig, mask: MaskVolume) -> Volume3:
    """Truncated k-space division.

    ``chi_hat(k) = f_hat(k) * sign(D) * min(|1/D|, cap)`` with the DC term
    zeroed; the spatial result is masked and mean-referenced.
    """
    _check_same_dims(field, kernel)
    _check_same_dims(field, mask)
    d = kernel.data
    with np.errstate(divide="ignore"):
        inv = np.sign(d) * np.minimum(np.abs(np.where(d == 0.0, np.inf, 1.0 / d)),
                                      cfg.inverse_cap)
    w = _fft_workers()
    chik = _fft.fftn(field.data, workers=w) * inv
    chik[0, 0, 0] = 0.0
    chi = _fft.ifftn(chik, workers=w).real
    return mean_referenced(Volume3(chi, field.voxel_size_mm, "ppm"), mask)


def cosmos(scans: list[OrientationScan], eps: float = 1e-6) -> Volume3:
    """Multi-orientation least-squares inversion.

    ``chi_hat = sum_i D_i f_hat_i / max(sum_i D_i^2, eps)`` with kernels
    built from each scan's rotation (effective field direction ``R^T z``).
    With identical orientations this degenerates to a single-orientation
    division whose zero cone stays unresolved.
    """
    if len(scans) < 2:
        raise ConfigError(f"cosmos needs >= 2 orientations, got {len(scans)}")
    if eps <= 0:
        raise ConfigError("eps must be positive")
    dims = scans[0].field.dims
    vox = scans[0].field.voxel_size_mm
    for s in scans[1:]:
        if s.field.dims != dims:
            raise DimensionMismatchError("scans live on different grids")
    w = _fft_workers()
    num = np.zeros(dims, dtype=np.complex128)
    den = np.zeros(dims)
    joint = np.ones(dims, dtype=bool)
    for s in scans:
        kern = rotated_kernel(dims, vox, s.rotation)
        num += kern.data * _fft.fftn(s.field.data, workers=w)
        den += kern.data ** 2
        joint &= s.mask.data
    chik = num / np.maximum(den, eps)
    chik[0, 0, 0] = 0.0
    chi = _fft.ifftn(chik, workers=w).real
    return mean_referenced(Volume3(chi, vox, "ppm"), MaskVolume(joint))


def magnitude_edge_masks(magnitude: Volume3, mask: MaskVolume, edge_fraction: float):
    """Per-direction regularizer gates: 0 on the strongest magnitude
    gradients (top ``edge_fraction`` inside the mask), 1 elsewhere in-mask.

    Thresholds are gradient-rank quantiles, so the selection is invariant
    to uniform scaling of the magnitude image.
    """
    gates = []
    for ax in range(3):
        g = np.abs(forward_diff(magnitude.data, ax))
        thr = np.quantile(g[mask.data], 1.0 - edge_fraction)
        gates.append(((g <= thr) & mask.data).astype(np.float64))
    return gates


def medi_like(field: Volume3, kernel: DipoleKernel, magnitude: Volume3,
              cfg: MediConfig, mask: MaskVolume):
    """Edge-weighted regularized inversion solved by IRLS + conjugate gradient.

    Minimizes ``||m (d*chi - f)||^2 + lam * sum_a ||G_a grad_a chi||_1`` with
    the L1 smoothed as ``sqrt(g^2 + eps^2)`` and ``G_a`` the magnitude edge
    gates.  Each outer iteration freezes the IRLS weights and solves the
    normal equations with CG.  Returns ``(chi, objective_trace)``; raises
    ConvergenceError if the objective increases on two consecutive outer
    iterations.
    """
    _check_same_dims(field, kernel)
    _check_same_dims(field, mask)
    _check_same_dims(field, magnitude)
    if np.any(magnitude.data < 0):
        raise ValueError("magnitude must be nonnegative")
    m = mask.data.astype(np.float64)
    gates = magnitude_edge_masks(magnitude, mask, cfg.edge_fraction)
    f = field.data * m
    lam = cfg.lam

    def apply_normal(x, weights):
        ax = convolve_kernel(x, kernel)
        out = convolve_kernel(m * ax, kernel)
        for a in range(3):
            out += (lam / 2.0) * forward_diff_adjoint(
                weights[a] * gates[a] * forward_diff(x, a), a)
        return out

    def objective(x):
        resid = m * (convolve_kernel(x, kernel) - f)
        val = float((resid ** 2).sum())
        for a in range(3):
            g = gates[a] * forward_diff(x, a)
            val += lam * float(np.sqrt(g ** 2 + cfg.smooth_eps ** 2).sum())
        return val

    b = convolve_kernel(m * f, kernel)
    x = np.zeros(field.dims)
    trace = []
    rises = 0
    for _ in range(cfg.max_iters):
        weights = []
        for a in range(3):
            g = gates[a] * forward_diff(x, a)
            weights.append(1.0 / np.sqrt(g ** 2 + cfg.smooth_eps ** 2))
        r = b - apply_normal(x, weights)
        p = r.copy()
        rs = float((r * r).sum())
        for _ in range(cfg.cg_iters):
            ap = apply_normal(p, weights)
            denom = float((p * ap).sum())
            if denom <= 0.0:
                break
            alpha = rs / denom
            x = x + alpha * p
            r = r - alpha * ap
            rs_new = float((r * r).sum())
            if rs_new < 1e-24:
                break
            p = r + (rs_new / rs) * p
            rs = rs_new
        trace.append(objective(x))
        if len(trace) >= 2 and trace[-1] > trace[-2] * (1.0 + 1e-12):
            rises += 1
            if rises >= 2:
                raise ConvergenceError(
                    "objective increased on two consecutive outer iterations; "
                    "adjust lam / cg_iters"
                )
        else:
            rises = 0
    chi = mean_referenced(Volume3(x, field.voxel_size_mm, "ppm"), mask)
    return chi, trace
