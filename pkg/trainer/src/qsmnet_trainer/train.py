"""Training loop: RMSProp from lr 1e-3 with stepwise exponential decay
every 400 optimizer steps, checkpointing and a JSON loss curve."""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch.utils.data import DataLoader

from .data import QPatchDataset
from .losses import LossWeights, load_kernel, total_loss
from .net import NetConfig, UNet3D, build_network


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    decay_every_steps: int = 400
    decay_rate: float = 0.95
    batch_size: int = 2
    epochs: int = 10
    max_steps: int | None = None
    weights: LossWeights = LossWeights()
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.decay_rate < 1.0:
            raise ValueError("decay_rate must lie in (0, 1) so lr strictly decays")
        if self.lr0 <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("invalid training configuration")


def learning_rate(cfg: TrainConfig, step: int) -> float:
    return cfg.lr0 * cfg.decay_rate ** (step // cfg.decay_every_steps)


def save_checkpoint(path, model: UNet3D, kernel_path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    torch.save({
        "model_state": model.state_dict(),
        "net_config": asdict(model.cfg),
        "kernel_path": str(kernel_path),
    }, tmp)
    os.replace(tmp, path)


def load_checkpoint(path) -> UNet3D:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    model = build_network(NetConfig(**blob["net_config"]))
    model.load_state_dict(blob["model_state"])
    model.eval()
    return model


def train(model: UNet3D, dataset: QPatchDataset, kernel: torch.Tensor,
          cfg: TrainConfig, out_dir) -> list[dict]:
    """Returns the per-step loss log; writes checkpoint.pt and loss_log.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    loader = DataLoader(dataset, batch_size=cfg.batch_size, shuffle=True,
                        drop_last=False)
    opt = torch.optim.RMSprop(model.parameters(), lr=cfg.lr0)
    log: list[dict] = []
    step = 0
    model.train()
    done = False
    for _epoch in range(cfg.epochs):
        if done:
            break
        for field, label, _mask in loader:
            lr = learning_rate(cfg, step)
            for group in opt.param_groups:
                group["lr"] = lr
            opt.zero_grad()
            pred = model(field)
            loss, parts = total_loss(pred, label, kernel, cfg.weights)
            if not math.isfinite(parts["total"]):
                raise RuntimeError(
                    f"loss became non-finite at step {step}: {parts}; aborting")
            loss.backward()
            opt.step()
            log.append({"step": step, "lr": lr, **parts})
            step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
    save_checkpoint(out_dir / "checkpoint.pt", model, kernel_path="")
    (out_dir / "loss_log.json").write_text(json.dumps(log, indent=1) + "\n")
    return log


def train_from_files(data_path, kernel_path, out_dir,
                     net_cfg: NetConfig | None = None,
                     cfg: TrainConfig | None = None) -> list[dict]:
    cfg = cfg or TrainConfig()
    dataset = QPatchDataset(data_path)
    kernel = load_kernel(kernel_path)
    if tuple(kernel.shape) != (dataset.patch_size,) * 3:
        raise ValueError(
            f"kernel {tuple(kernel.shape)} does not match patch size "
            f"{dataset.patch_size}")
    model = build_network(net_cfg)
    log = train(model, dataset, kernel, cfg, out_dir)
    save_checkpoint(Path(out_dir) / "checkpoint.pt", model, kernel_path)
    return log
