"""Torch dataset over .qpatch records."""

from __future__ import annotations

import numpy as np
import torch
from torch.utils.data import Dataset

from .formats import read_qpatch


class QPatchDataset(Dataset):
    """Aligned (field, label, mask) patch triples, each (1, ps, ps, ps).

    Accepts one .qpatch path or a list of paths with matching patch sizes.
    """

    def __init__(self, paths):
        if isinstance(paths, (str, bytes)) or not hasattr(paths, "__iter__"):
            paths = [paths]
        self._records = []
        self.patch_size = None
        self.voxel_size_mm = None
        for path in paths:
            header, records = read_qpatch(path)
            ps = int(header["patch_size"])
            if self.patch_size is None:
                self.patch_size = ps
                self.voxel_size_mm = tuple(float(v) for v in header["voxel_size_mm"])
            elif ps != self.patch_size:
                raise ValueError(f"{path}: patch size {ps} != {self.patch_size}")
            self._records.extend(records)
        if not self._records:
            raise ValueError("dataset is empty")

    def __len__(self) -> int:
        return len(self._records)

    def __getitem__(self, idx: int):
        field, label, mask = self._records[idx]
        to = lambda a: torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32))[None]
        return to(field), to(label), to(mask)
