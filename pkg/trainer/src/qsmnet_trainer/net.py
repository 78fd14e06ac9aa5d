"""3D U-net for dipole deconvolution: four down/up groups of two 5^3
convolutions (each followed by batch norm and ReLU), 2^3 max-pool /
deconvolution transitions, skip concatenations, and a final 1^3 convolution.

Layer census: 19 convolutions (18 of 5^3 + the 1^3 head), 18 batch norms,
18 ReLUs, 4 pools, 4 deconvolutions, 4 concatenations.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

DEPTH = 4
DOWNSAMPLE_FACTOR = 2 ** DEPTH


@dataclass(frozen=True)
class NetConfig:
    base_channels: int = 8      # desk scale; paper_scale() uses 32
    conv_kernel: int = 5
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.conv_kernel % 2 != 1:
            raise ValueError("conv_kernel must be odd to preserve shape")

    @classmethod
    def paper_scale(cls) -> "NetConfig":
        return cls(base_channels=32)


def _conv_block(c_in: int, c_out: int, k: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv3d(c_in, c_out, k, padding=k // 2),
        nn.BatchNorm3d(c_out),
        nn.ReLU(inplace=True),
    )


class UNet3D(nn.Module):
    def __init__(self, cfg: NetConfig | None = None):
        super().__init__()
        cfg = cfg or NetConfig()
        self.cfg = cfg
        b, k = cfg.base_channels, cfg.conv_kernel

        widths = [b * 2 ** i for i in range(DEPTH)]          # 8,16,32,64
        self.down = nn.ModuleList()
        c_in = cfg.in_channels
        for w in widths:
            self.down.append(nn.Sequential(_conv_block(c_in, w, k),
                                           _conv_block(w, w, k)))
            c_in = w
        self.pool = nn.MaxPool3d(2)

        bridge_w = widths[-1] * 2                            # 128
        self.bridge = nn.Sequential(_conv_block(widths[-1], bridge_w, k),
                                    _conv_block(bridge_w, bridge_w, k))

        self.up_transpose = nn.ModuleList()
        self.up = nn.ModuleList()
        c = bridge_w
        for w in reversed(widths):
            self.up_transpose.append(nn.ConvTranspose3d(c, w, 2, stride=2))
            # skip concatenation doubles the channel count at each join
            self.up.append(nn.Sequential(_conv_block(2 * w, w, k),
                                         _conv_block(w, w, k)))
            c = w
        self.head = nn.Conv3d(widths[0], cfg.out_channels, 1)
        self.apply(_init_xavier)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        spatial = x.shape[-3:]
        if any(s % DOWNSAMPLE_FACTOR for s in spatial):
            raise ValueError(
                f"input spatial dims {tuple(spatial)} must be divisible by "
                f"{DOWNSAMPLE_FACTOR}")
        skips = []
        for group in self.down:
            x = group(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bridge(x)
        for deconv, group, skip in zip(self.up_transpose, self.up, reversed(skips)):
            x = deconv(x)
            x = torch.cat([skip, x], dim=1)
            x = group(x)
        return self.head(x)

    def layer_census(self) -> dict:
        counts = {"conv": 0, "conv_5": 0, "conv_1": 0, "batch_norm": 0,
                  "relu": 0, "max_pool": 0, "deconv": 0,
                  "concat": len(self.up)}
        for m in self.modules():
            if isinstance(m, nn.Conv3d):
                counts["conv"] += 1
                key = "conv_5" if m.kernel_size[0] == self.cfg.conv_kernel else "conv_1"
                counts[key] += 1
            elif isinstance(m, nn.BatchNorm3d):
                counts["batch_norm"] += 1
            elif isinstance(m, nn.ReLU):
                counts["relu"] += 1
            elif isinstance(m, nn.ConvTranspose3d):
                counts["deconv"] += 1
        counts["max_pool"] = len(self.down)  # one shared pool module, reused
        return counts

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def _init_xavier(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv3d, nn.ConvTranspose3d)):
        nn.init.xavier_uniform_(module.weight)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def build_network(cfg: NetConfig | None = None) -> UNet3D:
    return UNet3D(cfg)
