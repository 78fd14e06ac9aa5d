#!/usr/bin/env python3
"""Build a patch dataset for network training from randomized synthetic
phantoms: render, forward-simulate with mild noise, tilt-augment, extract
overlapping patches, and export alongside the matching dipole kernel.

Usage: python scripts/make_training_set.py out.qpatch kernel.qvol \
        [--n-phantoms 8] [--dims 48] [--patch-size 32] [--seed 0]
"""

import argparse

import numpy as np

from qsmkit import (
    PatchDataset,
    PhantomSpec,
    Primitive,
    apply_mask,
    augment,
    dipole_kernel,
    extract_patches,
    forward_field,
    kernel_to_volume,
    render_phantom,
    write_qpatch,
)
from qsmkit.io import save_volume


def random_spec(rng, fov: float) -> PhantomSpec:
    prims = []
    for _ in range(int(rng.integers(2, 6))):
        shape = rng.choice(["sphere", "box", "cylinder_z"])
        center = tuple(rng.uniform(0.35 * fov, 0.65 * fov, 3))
        chi = float(rng.uniform(-0.15, 0.2))
        if shape == "sphere":
            prims.append(Primitive("sphere", center, chi,
                                   radius_mm=float(rng.uniform(3, 7))))
        elif shape == "box":
            prims.append(Primitive("box", center, chi,
                                   size_mm=tuple(rng.uniform(4, 10, 3))))
        else:
            prims.append(Primitive("cylinder_z", center, chi,
                                   radius_mm=float(rng.uniform(2, 5)),
                                   length_mm=float(rng.uniform(8, 16))))
    return PhantomSpec(tuple(prims))


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("out_qpatch")
    ap.add_argument("out_kernel")
    ap.add_argument("--n-phantoms", type=int, default=8)
    ap.add_argument("--dims", type=int, default=48)
    ap.add_argument("--patch-size", type=int, default=32)
    ap.add_argument("--overlap", type=float, default=0.5)
    ap.add_argument("--noise-std-ppm", type=float, default=0.005)
    ap.add_argument("--augment-angle-deg", type=float, default=15.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    dims = (args.dims,) * 3
    voxel = (1.0, 1.0, 1.0)
    kern = dipole_kernel(dims, voxel, (0, 0, 1))

    records = []
    for i in range(args.n_phantoms):
        chi, mask, _ = render_phantom(random_spec(rng, float(args.dims)), dims, voxel)
        pairs = [(chi, mask)]
        angle = float(rng.uniform(-args.augment_angle_deg, args.augment_angle_deg))
        _, aug_label, aug_mask = augment(chi, mask, angle, "x" if i % 2 == 0 else "y")
        pairs.append((aug_label, aug_mask))
        for label, m in pairs:
            field = forward_field(label, kern)
            field = field.with_data(field.data
                                    + rng.normal(0, args.noise_std_ppm, dims))
            ds = extract_patches(apply_mask(field, m), apply_mask(label, m), m,
                                 patch_size=args.patch_size, overlap=args.overlap,
                                 source=f"phantom-{i}")
            records.extend(ds.records)

    full = PatchDataset(args.patch_size, ds.stride, voxel, tuple(records),
                        source="make_training_set")
    write_qpatch(args.out_qpatch, full)
    save_volume(args.out_kernel, kernel_to_volume(
        dipole_kernel((args.patch_size,) * 3, voxel, (0, 0, 1))))
    print(f"{full.count} patches -> {args.out_qpatch}; kernel -> {args.out_kernel}")


if __name__ == "__main__":
    main()
