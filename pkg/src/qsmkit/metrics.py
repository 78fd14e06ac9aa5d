"""Reconstruction quality metrics and multi-orientation ROI statistics.

The four scalar metrics follow the 2016 QSM reconstruction challenge
parameterization: RMSE normalized by the reference norm, pSNR peaked on
the reference, HFEN with a 15^3 Laplacian-of-Gaussian (sigma 1.5 voxels),
and 3D SSIM with a Gaussian window (sigma 1.5, K1=0.01, K2=0.03).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.signal import fftconvolve

from .errors import EmptyMaskError
from .volume import MaskVolume, Volume3, _check_same_dims

PSNR_CAP_DB = 999.0

HFEN_KERNEL_SIZE = 15
HFEN_SIGMA_VOX = 1.5
SSIM_SIGMA_VOX = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    rmse_percent: float
    hfen_percent: float
    ssim: float

    def as_dict(self) -> dict:
        return {
            "psnr_db": self.psnr_db,
            "rmse_percent": self.rmse_percent,
            "hfen_percent": self.hfen_percent,
            "ssim": self.ssim,
        }


@dataclass(frozen=True)
class RoiStats:
    """Per-ROI mean/std of the ROI-mean susceptibility across orientations."""

    means_ppm: dict
    stds_ppm: dict

    def as_dict(self) -> dict:
        return {
            str(k): {"mean_ppm": self.means_ppm[k], "std_ppm": self.stds_ppm[k]}
            for k in sorted(self.means_ppm)
        }


def log_kernel(size: int = HFEN_KERNEL_SIZE, sigma: float = HFEN_SIGMA_VOX) -> np.ndarray:
    """Zero-sum-normalized 3D Laplacian-of-Gaussian kernel."""
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    r2 = X ** 2 + Y ** 2 + Z ** 2
    g = np.exp(-r2 / (2.0 * sigma ** 2))
    k = (r2 / sigma ** 2 - 3.0) * g
    return k - k.mean()


def _ssim_components(x: np.ndarray, y: np.ndarray, dynamic_range: float,
                     sigma: float = SSIM_SIGMA_VOX):
    """Luminance, contrast and structure maps of the standard decomposition."""
    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2
    c3 = c2 / 2.0

    def win(a):
        return ndimage.gaussian_filter(a, sigma, mode="constant", cval=0.0)

    mx, my = win(x), win(y)
    vx = np.maximum(win(x * x) - mx ** 2, 0.0)
    vy = np.maximum(win(y * y) - my ** 2, 0.0)
    cov = win(x * y) - mx * my
    sx, sy = np.sqrt(vx), np.sqrt(vy)
    lum = (2.0 * mx * my + c1) / (mx ** 2 + my ** 2 + c1)
    con = (2.0 * sx * sy + c2) / (vx + vy + c2)
    struct = (cov + c3) / (sx * sy + c3)
    return lum, con, struct


def compute_metrics(x: Volume3, ref: Volume3, mask: MaskVolume) -> MetricReport:
    """Score a reconstruction against a reference inside a mask."""
    _check_same_dims(x, ref)
    _check_same_dims(x, mask)
    mask.require_nonempty()
    sel = mask.data
    xd = np.where(sel, x.data, 0.0)
    rd = np.where(sel, ref.data, 0.0)

    ref_norm = float(np.linalg.norm(rd[sel]))
    if ref_norm == 0.0:
        raise ValueError("reference is identically zero inside the mask")

    diff = xd[sel] - rd[sel]
    rmse_percent = 100.0 * float(np.linalg.norm(diff)) / ref_norm

    mse = float(np.mean(diff ** 2))
    peak = float(np.abs(rd[sel]).max())
    if mse == 0.0:
        psnr = PSNR_CAP_DB
    else:
        psnr = min(20.0 * np.log10(peak / np.sqrt(mse)), PSNR_CAP_DB)

    k = log_kernel()
    lx = fftconvolve(xd, k, mode="same")
    lr = fftconvolve(rd, k, mode="same")
    lr_norm = float(np.linalg.norm(lr))
    hfen_percent = 100.0 * float(np.linalg.norm(lx - lr)) / lr_norm

    dr = float(rd[sel].max() - rd[sel].min())
    if dr == 0.0:
        dr = max(peak, np.finfo(float).tiny)
    lum, con, struct = _ssim_components(xd, rd, dr)
    ssim = float((lum * con * struct)[sel].mean())
    return MetricReport(float(psnr), rmse_percent, hfen_percent, ssim)


def roi_stats(maps: list[Volume3], labels: Volume3, mask: MaskVolume,
              roi_ids=None) -> RoiStats:
    """Per-ROI mean over voxels, then mean/std across orientation maps."""
    if not maps:
        raise ValueError("need at least one map")
    _check_same_dims(maps[0], labels)
    _check_same_dims(maps[0], mask)
    lab = np.rint(labels.data).astype(int)
    if roi_ids is None:
        roi_ids = sorted(int(v) for v in np.unique(lab[lab > 0]))
    means, stds = {}, {}
    for roi in roi_ids:
        sel = (lab == roi) & mask.data
        if not sel.any():
            raise EmptyMaskError(f"ROI {roi} has no voxels inside the mask")
        per_map = np.array([float(m.data[sel].mean()) for m in maps])
        means[roi] = float(per_map.mean())
        stds[roi] = float(per_map.std())
    return RoiStats(means, stds)
