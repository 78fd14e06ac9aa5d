import json
import subprocess
from pathlib import Path

import numpy as np
import pytest

NOISE_STD_PPM = 0.01
TRAIN_DIMS = 48
PATCH_SIZE = 32


def qsm(*args) -> None:
    """Invoke the toolkit CLI; the trainer only consumes its file outputs."""
    cmd = ["qsm"] + [str(a) for a in args]
    res = subprocess.run(cmd, capture_output=True, text=True)
    if res.returncode != 0:
        raise RuntimeError(f"{' '.join(cmd)} failed: {res.stderr}")


def random_phantom_spec(rng, fov: float) -> dict:
    prims = []
    for _ in range(int(rng.integers(2, 5))):
        kind = rng.choice(["sphere", "box", "cylinder_z"])
        center = [float(c) for c in rng.uniform(0.35 * fov, 0.65 * fov, 3)]
        chi = float(rng.uniform(-0.2, 0.25))
        if kind == "sphere":
            prims.append({"shape": "sphere", "center_mm": center, "chi_ppm": chi,
                          "radius_mm": float(rng.uniform(3, 7))})
        elif kind == "box":
            prims.append({"shape": "box", "center_mm": center, "chi_ppm": chi,
                          "size_mm": [float(s) for s in rng.uniform(4, 10, 3)]})
        else:
            prims.append({"shape": "cylinder_z", "center_mm": center,
                          "chi_ppm": chi, "radius_mm": float(rng.uniform(2, 5)),
                          "length_mm": float(rng.uniform(8, 14))})
    return {"primitives": prims}


def make_scan(base: Path, name: str, seed: int) -> dict:
    """Phantom + noisy forward field via the toolkit CLI; returns file paths."""
    rng = np.random.default_rng(seed)
    spec = base / f"{name}_spec.json"
    spec.write_text(json.dumps(random_phantom_spec(rng, float(TRAIN_DIMS))))
    ph = base / f"{name}_ph"
    qsm("phantom", "--spec", spec, "--dims", f"{TRAIN_DIMS},{TRAIN_DIMS},{TRAIN_DIMS}",
        "--voxel", "1,1,1", "--out-prefix", ph)
    sim = base / f"{name}_sim"
    qsm("simulate", "--chi", f"{ph}_chi.qvol", "--mask", f"{ph}_mask.qvol",
        "--orientations", "x:0", "--noise-std-ppm", NOISE_STD_PPM,
        "--seed", seed, "--out-prefix", sim)
    return {"chi": f"{ph}_chi.qvol", "mask": f"{ph}_mask.qvol",
            "field": f"{sim}_field_00.qvol"}


@pytest.fixture(scope="session")
def training_bundle(tmp_path_factory):
    """Patch datasets, the exported kernel, and one held-out scan."""
    base = tmp_path_factory.mktemp("bundle")
    datasets = []
    kernel = base / "kernel.qvol"
    for i in range(8):
        paths = make_scan(base, f"train{i}", seed=100 + i)
        out = base / f"train{i}.qpatch"
        args = ["patches", "--input", paths["field"], "--label", paths["chi"],
                "--mask", paths["mask"], "--patch-size", PATCH_SIZE,
                "--overlap", "0.5", "--out", out]
        if i == 0:
            args += ["--export-kernel", kernel]
        qsm(*args)
        datasets.append(out)
    held = make_scan(base, "held", seed=999)
    return {"datasets": datasets, "kernel": kernel, "held": held, "dir": base}
