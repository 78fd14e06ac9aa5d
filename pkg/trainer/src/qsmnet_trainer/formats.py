"""Readers/writers for the toolkit interchange files.

``.qvol``: raw little-endian float32 voxels in x-fastest order plus a JSON
sidecar ``<name>.qvol.json`` with dims, voxel size and unit tag.

``.qpatch``: one JSON header line, then fixed-length records of three
float32 blocks (input field, label susceptibility, mask as 0/1).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def read_qvol(path):
    """Returns (data float64 array, voxel_size_mm tuple, unit_tag)."""
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    dims = tuple(int(n) for n in meta["dims"])
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != int(np.prod(dims)):
        raise ValueError(f"{path}: voxel count does not match dims {dims}")
    data = raw.reshape(dims, order="F").astype(np.float64)
    return data, tuple(float(v) for v in meta["voxel_size_mm"]), meta["unit_tag"]


def write_qvol(path, data: np.ndarray, voxel_size_mm, unit_tag: str = "ppm") -> Path:
    path = Path(path)
    if path.suffix != ".qvol":
        path = path.with_name(path.name + ".qvol")
    path.write_bytes(np.asarray(data, dtype="<f4").ravel(order="F").tobytes())
    meta = {"dims": list(data.shape), "voxel_size_mm": list(voxel_size_mm),
            "unit_tag": unit_tag}
    path.with_name(path.name + ".json").write_text(json.dumps(meta, indent=1) + "\n")
    return path


def read_qpatch(path):
    """Returns (header dict, list of (input, label, mask) float32 arrays)."""
    path = Path(path)
    records = []
    with path.open("rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        ps = int(header["patch_size"])
        block = ps ** 3 * 4
        for _ in range(int(header["count"])):
            buf = fh.read(3 * block)
            if len(buf) != 3 * block:
                raise ValueError(f"{path}: truncated record")
            arrs = [
                np.frombuffer(buf, dtype="<f4", count=ps ** 3, offset=i * block)
                .reshape((ps, ps, ps), order="F")
                for i in range(3)
            ]
            records.append((arrs[0], arrs[1], arrs[2]))
    return header, records
