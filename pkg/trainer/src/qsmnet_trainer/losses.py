"""Training losses matching the toolkit's reference operators.

The dipole kernel is loaded from a ``.qvol`` exported by the toolkit and is
never re-derived here, so the model-consistency term is numerically the
same operator on both sides of the file boundary.  All three terms are
per-voxel means; the convolution terms discard a 5-voxel shell before
averaging.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .formats import read_qvol

EDGE_DISCARD = 5


@dataclass(frozen=True)
class LossWeights:
    model: float = 1.0
    l1: float = 1.0
    gradient: float = 0.1


def load_kernel(path, device="cpu", dtype=torch.float32) -> torch.Tensor:
    data, _, _ = read_qvol(path)
    return torch.as_tensor(data, dtype=dtype, device=device)


def _convolve(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    spec = torch.fft.fftn(x, dim=(-3, -2, -1))
    return torch.fft.ifftn(spec * kernel, dim=(-3, -2, -1)).real


def _interior(x: torch.Tensor, discard: int) -> torch.Tensor:
    if any(s <= 2 * discard for s in x.shape[-3:]):
        raise ValueError(f"patch {tuple(x.shape[-3:])} too small for a "
                         f"{discard}-voxel edge discard")
    return x[..., discard:-discard, discard:-discard, discard:-discard]


def _grad_l1_mean(x: torch.Tensor) -> torch.Tensor:
    # forward differences with an implicit zero last plane: the absolute sum
    # is divided by the full voxel count, matching the reference operator
    n = x.shape[-3] * x.shape[-2] * x.shape[-1]
    total = x.new_zeros(())
    for ax in (-3, -2, -1):
        g = x.narrow(ax, 1, x.shape[ax] - 1) - x.narrow(ax, 0, x.shape[ax] - 1)
        total = total + g.abs().sum() / (n * max(x.shape[0], 1) if x.dim() > 3 else n)
    return total


def loss_model(chi: torch.Tensor, y: torch.Tensor, kernel: torch.Tensor,
               edge_discard: int = EDGE_DISCARD) -> torch.Tensor:
    diff = _convolve(chi - y, kernel)
    return _interior(diff, edge_discard).abs().mean()


def loss_l1(chi: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    return (chi - y).abs().mean()


def loss_gradient(chi: torch.Tensor, y: torch.Tensor, kernel: torch.Tensor,
                  edge_discard: int = EDGE_DISCARD) -> torch.Tensor:
    diff = chi - y
    total = _grad_l1_mean(diff)
    conv = _interior(_convolve(diff, kernel), edge_discard)
    return total + _grad_l1_mean(conv)


def total_loss(chi: torch.Tensor, y: torch.Tensor, kernel: torch.Tensor,
               weights: LossWeights | None = None,
               edge_discard: int = EDGE_DISCARD):
    """Weighted sum; returns (total, parts dict of detached floats)."""
    w = weights or LossWeights()
    lm = loss_model(chi, y, kernel, edge_discard)
    ll = loss_l1(chi, y)
    lg = loss_gradient(chi, y, kernel, edge_discard)
    total = w.model * lm + w.l1 * ll + w.gradient * lg
    parts = {"model": lm.detach().item(), "l1": ll.detach().item(),
             "gradient": lg.detach().item(), "total": total.detach().item()}
    return total, parts
