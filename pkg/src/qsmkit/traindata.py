"""Training-data preparation and the reconstruction loss operators.

Covers rotate-back label generation, tilt augmentation with forward
re-convolution, overlapping 64^3 patch extraction, and the three losses
(dipole-model consistency, voxel L1, gradient difference) plus their
weighted sum.  Losses are per-voxel means so values are patch-size
independent; they differ from raw-sum norms only by a constant factor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dipole import DipoleKernel, convolve_kernel, dipole_kernel, forward_field
from .errors import ConfigError, DimensionMismatchError, VolumeFormatError
from .volume import (
    MaskVolume,
    RotationMatrix,
    Volume3,
    _check_same_dims,
    apply_mask,
    forward_diff,
    resample_rotated,
    resample_rotated_mask,
)

MAX_AUGMENT_DEG = 30.0
DEFAULT_PATCH = 64
DEFAULT_OVERLAP = 2.0 / 3.0
DEFAULT_EDGE_DISCARD = 5

QPATCH_VERSION = 1


@dataclass(frozen=True)
class LossWeights:
    """Weights for (model, L1, gradient); defaults (1, 1, 0.1)."""

    w1: float = 1.0
    w2: float = 1.0
    w3: float = 0.1

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.w3 < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.w1 == self.w2 == self.w3 == 0:
            raise ConfigError("at least one loss weight must be nonzero")


@dataclass(frozen=True, eq=False)
class PatchRecord:
    input: np.ndarray
    label: np.ndarray
    mask: np.ndarray
    origin: tuple[int, int, int]


@dataclass(frozen=True, eq=False)
class PatchDataset:
    patch_size: int
    stride: int
    voxel_size_mm: tuple[float, float, float]
    records: tuple[PatchRecord, ...]
    source: str = ""

    @property
    def count(self) -> int:
        return len(self.records)


def make_label_pair(cosmos_map: Volume3, R: RotationMatrix, field_unreg: Volume3,
                    mask: MaskVolume):
    """Rotate a multi-orientation reference map back to one scan's frame.

    Returns ``(input_field, label, rotated_mask)``: the unregistered field
    unchanged, the reference map resampled with R^T, both gated by the
    rotated-back mask.
    """
    if not isinstance(R, RotationMatrix):
        R = RotationMatrix(np.asarray(R))
    _check_same_dims(cosmos_map, field_unreg)
    _check_same_dims(cosmos_map, mask)
    rt = R.T
    label = resample_rotated(cosmos_map, rt)
    m_rot = resample_rotated_mask(mask, rt, cosmos_map.voxel_size_mm)
    return apply_mask(field_unreg, m_rot), apply_mask(label, m_rot), m_rot


def augment(label: Volume3, mask: MaskVolume, angle_deg: float, axis: str):
    """Tilt a label map and regenerate its field by dipole convolution.

    Returns ``(input_field, new_label, new_mask)``; the input satisfies the
    forward model against the new label identically inside the mask.
    Tilts beyond +-30 degrees are outside the augmentation protocol.
    """
    if abs(angle_deg) > MAX_AUGMENT_DEG:
        raise ConfigError(
            f"augmentation angle {angle_deg} exceeds +-{MAX_AUGMENT_DEG} degrees")
    if axis not in ("x", "y"):
        raise ConfigError(f"augmentation axis must be x or y, got {axis!r}")
    _check_same_dims(label, mask)
    R = RotationMatrix.about_axis(axis, angle_deg)
    new_mask = resample_rotated_mask(mask, R, label.voxel_size_mm)
    new_label = apply_mask(resample_rotated(label, R), new_mask)
    kern = dipole_kernel(label.dims, label.voxel_size_mm, (0.0, 0.0, 1.0))
    new_input = apply_mask(forward_field(new_label, kern), new_mask)
    return new_input, new_label, new_mask


def patch_positions(n: int, patch_size: int, stride: int) -> list[int]:
    """Start positions along one axis: a stride grid from 0 with the final
    patch clamped flush to the far edge."""
    if n < patch_size:
        raise DimensionMismatchError(f"axis of {n} voxels cannot hold a {patch_size} patch")
    pos = list(range(0, n - patch_size + 1, stride))
    pos[-1] = n - patch_size
    return sorted(set(pos))


def extract_patches(input_field: Volume3, label: Volume3, mask: MaskVolume,
                    patch_size: int = DEFAULT_PATCH,
                    overlap: float = DEFAULT_OVERLAP,
                    source: str = "") -> PatchDataset:
    """Cut aligned (input, label, mask) patches on an overlapping grid.

    The stride is ``round(patch_size * (1 - overlap))`` (21 for the default
    64 / 66% setup).  Patches with an empty mask are dropped.
    """
    _check_same_dims(input_field, label)
    _check_same_dims(input_field, mask)
    if not 0.0 <= overlap < 1.0:
        raise ConfigError("overlap must lie in [0, 1)")
    stride = max(1, round(patch_size * (1.0 - overlap)))
    axes_pos = [patch_positions(n, patch_size, stride) for n in input_field.dims]
    records = []
    for i in axes_pos[0]:
        for j in axes_pos[1]:
            for k in axes_pos[2]:
                sl = (slice(i, i + patch_size), slice(j, j + patch_size),
                      slice(k, k + patch_size))
                mpatch = mask.data[sl]
                if not mpatch.any():
                    continue
                records.append(PatchRecord(
                    input=input_field.data[sl].copy(),
                    label=label.data[sl].copy(),
                    mask=mpatch.copy(),
                    origin=(i, j, k),
                ))
    return PatchDataset(patch_size, stride, input_field.voxel_size_mm,
                        tuple(records), source)


def write_qpatch(path, ds: PatchDataset) -> Path:
    """Serialize a dataset: one JSON header line, then fixed-length records
    of three little-endian float32 blocks (input, label, mask as 0/1)."""
    path = Path(path)
    header = {
        "version": QPATCH_VERSION,
        "patch_size": ds.patch_size,
        "count": ds.count,
        "voxel_size_mm": list(ds.voxel_size_mm),
    }
    with path.open("wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("ascii"))
        for rec in ds.records:
            fh.write(np.asarray(rec.input, dtype="<f4").ravel(order="F").tobytes())
            fh.write(np.asarray(rec.label, dtype="<f4").ravel(order="F").tobytes())
            fh.write(np.asarray(rec.mask, dtype="<f4").ravel(order="F").tobytes())
    return path


def read_qpatch(path) -> PatchDataset:
    path = Path(path)
    with path.open("rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        if header.get("version") != QPATCH_VERSION:
            raise VolumeFormatError(f"unsupported .qpatch version {header.get('version')}")
        ps = int(header["patch_size"])
        count = int(header["count"])
        vox = tuple(float(v) for v in header["voxel_size_mm"])
        block = ps ** 3 * 4
        records = []
        for _ in range(count):
            buf = fh.read(3 * block)
            if len(buf) != 3 * block:
                raise VolumeFormatError(f"{path}: truncated record block")
            arrs = [
                np.frombuffer(buf, dtype="<f4", count=ps ** 3, offset=i * block)
                .reshape((ps, ps, ps), order="F").astype(np.float64)
                for i in range(3)
            ]
            records.append(PatchRecord(arrs[0], arrs[1], arrs[2] > 0.5, (0, 0, 0)))
    stride = max(1, round(ps * (1.0 - DEFAULT_OVERLAP)))
    return PatchDataset(ps, stride, vox, tuple(records), str(path))


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Volume3) else np.asarray(x, dtype=np.float64)


def _interior(shape, discard: int):
    if any(n <= 2 * discard for n in shape):
        raise DimensionMismatchError(
            f"volume {shape} too small for an edge discard of {discard}")
    return tuple(slice(discard, n - discard) for n in shape)


def loss_model(chi, y, kernel: DipoleKernel, edge_discard: int = DEFAULT_EDGE_DISCARD) -> float:
    """Dipole-consistency loss: mean |d*chi - d*y| over the interior after
    discarding ``edge_discard`` voxels per face (convolution edge guard)."""
    a, b = _as_array(chi), _as_array(y)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch {a.shape} vs {b.shape}")
    sl = _interior(a.shape, edge_discard)
    diff = convolve_kernel(a - b, kernel)
    return float(np.abs(diff[sl]).mean())


def loss_l1(chi, y) -> float:
    """Mean per-voxel |chi - y|."""
    a, b = _as_array(chi), _as_array(y)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


def loss_gradient(chi, y, kernel: DipoleKernel,
                  edge_discard: int = DEFAULT_EDGE_DISCARD) -> float:
    """Edge-preservation loss: six per-axis terms.

    Mean |grad_a chi - grad_a y| over the full volume for each axis, plus
    mean |grad_a(d*chi) - grad_a(d*y)| on the interior crop used by the
    model loss.  Gradients are forward differences with a zero last plane.
    """
    a, b = _as_array(chi), _as_array(y)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch {a.shape} vs {b.shape}")
    total = 0.0
    diff = a - b
    for ax in range(3):
        total += float(np.abs(forward_diff(diff, ax)).mean())
    sl = _interior(a.shape, edge_discard)
    conv_diff = convolve_kernel(diff, kernel)[sl]
    for ax in range(3):
        total += float(np.abs(forward_diff(conv_diff, ax)).mean())
    return total


def total_loss(chi, y, kernel: DipoleKernel, w: LossWeights | None = None,
               edge_discard: int = DEFAULT_EDGE_DISCARD) -> float:
    """Weighted sum: w1*model + w2*l1 + w3*gradient."""
    w = w or LossWeights()
    val = 0.0
    if w.w1:
        val += w.w1 * loss_model(chi, y, kernel, edge_discard)
    if w.w2:
        val += w.w2 * loss_l1(chi, y)
    if w.w3:
        val += w.w3 * loss_gradient(chi, y, kernel, edge_discard)
    return val
