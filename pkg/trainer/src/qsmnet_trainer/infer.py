"""Inference: field .qvol -> susceptibility .qvol.

The input must have its field direction along z (the training convention).
Dims not divisible by 16 are zero-padded up and cropped back; an optional
mask gates the output.
"""

from __future__ import annotations

import numpy as np
import torch

from .formats import read_qvol, write_qvol
from .net import DOWNSAMPLE_FACTOR, UNet3D
from .train import load_checkpoint


def _pad_to_multiple(data: np.ndarray, m: int):
    pads = [(0, (-s) % m) for s in data.shape]
    return np.pad(data, pads), pads


@torch.no_grad()
def infer_volume(model: UNet3D, field: np.ndarray) -> np.ndarray:
    model.eval()
    padded, pads = _pad_to_multiple(field, DOWNSAMPLE_FACTOR)
    x = torch.from_numpy(padded.astype(np.float32))[None, None]
    out = model(x)[0, 0].numpy().astype(np.float64)
    sl = tuple(slice(0, s) for s in field.shape)
    return out[sl]


def infer_file(checkpoint_path, field_path, out_path, mask_path=None) -> None:
    model = load_checkpoint(checkpoint_path)
    field, voxel, _unit = read_qvol(field_path)
    chi = infer_volume(model, field)
    if mask_path is not None:
        mask, _, _ = read_qvol(mask_path)
        chi = np.where(mask > 0.5, chi, 0.0)
    write_qvol(out_path, chi, voxel, "ppm")
