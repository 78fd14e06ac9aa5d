"""Synthetic susceptibility phantoms with analytic field oracles.

Primitives are rasterized by voxel-center inclusion.  The analytic sphere
and cylinder fields are the standard closed forms for the Lorentz-corrected
local field and serve as independent checks on the FFT forward model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import PhantomSpecError
from .volume import MaskVolume, Volume3

FOV_MARGIN_VOX = 4

# Builtin brain-like composite: five labeled blobs standing in for the deep
# gray-matter ROIs commonly reported in susceptibility studies.  Placeholder
# magnitudes in the physiologic range; used for pipeline exercises only.
ROI_NAMES = {1: "PUT", 2: "GP", 3: "CAU", 4: "RN", 5: "SN"}
_ROI_CHI_PPM = {1: 0.04, 2: 0.13, 3: 0.05, 4: 0.10, 5: 0.12}


@dataclass(frozen=True)
class Primitive:
    """One phantom building block (sphere, z-aligned cylinder, or box)."""

    shape: str
    center_mm: tuple[float, float, float]
    chi_ppm: float
    radius_mm: float | None = None
    length_mm: float | None = None
    size_mm: tuple[float, float, float] | None = None
    label: int | None = None

    def __post_init__(self):
        if self.shape not in ("sphere", "cylinder_z", "box"):
            raise PhantomSpecError(f"unknown primitive shape {self.shape!r}")
        if self.shape in ("sphere", "cylinder_z") and not self.radius_mm:
            raise PhantomSpecError(f"{self.shape} needs radius_mm")
        if self.shape == "cylinder_z" and not self.length_mm:
            raise PhantomSpecError("cylinder_z needs length_mm")
        if self.shape == "box" and not self.size_mm:
            raise PhantomSpecError("box needs size_mm")

    def extent_mm(self):
        """Axis-aligned bounding half-sizes."""
        if self.shape == "sphere":
            r = self.radius_mm
            return (r, r, r)
        if self.shape == "cylinder_z":
            return (self.radius_mm, self.radius_mm, self.length_mm / 2.0)
        return tuple(s / 2.0 for s in self.size_mm)


@dataclass(frozen=True)
class PhantomSpec:
    primitives: tuple[Primitive, ...]

    def __post_init__(self):
        labels = [p.label for p in self.primitives if p.label is not None]
        if len(labels) != len(set(labels)):
            raise PhantomSpecError("primitive labels must be unique")

    @classmethod
    def from_json(cls, path) -> "PhantomSpec":
        raw = json.loads(Path(path).read_text())
        prims = []
        for p in raw["primitives"]:
            prims.append(Primitive(
                shape=p["shape"],
                center_mm=tuple(p["center_mm"]),
                chi_ppm=float(p["chi_ppm"]),
                radius_mm=p.get("radius_mm"),
                length_mm=p.get("length_mm"),
                size_mm=tuple(p["size_mm"]) if p.get("size_mm") else None,
                label=p.get("label"),
            ))
        return cls(tuple(prims))

    def to_json(self, path) -> None:
        prims = []
        for p in self.primitives:
            d = {"shape": p.shape, "center_mm": list(p.center_mm), "chi_ppm": p.chi_ppm}
            if p.radius_mm is not None:
                d["radius_mm"] = p.radius_mm
            if p.length_mm is not None:
                d["length_mm"] = p.length_mm
            if p.size_mm is not None:
                d["size_mm"] = list(p.size_mm)
            if p.label is not None:
                d["label"] = p.label
            prims.append(d)
        Path(path).write_text(json.dumps({"primitives": prims}, indent=1) + "\n")


def _inside(prim: Primitive, X, Y, Z) -> np.ndarray:
    cx, cy, cz = prim.center_mm
    if prim.shape == "sphere":
        return (X - cx) ** 2 + (Y - cy) ** 2 + (Z - cz) ** 2 <= prim.radius_mm ** 2
    if prim.shape == "cylinder_z":
        return (((X - cx) ** 2 + (Y - cy) ** 2 <= prim.radius_mm ** 2)
                & (np.abs(Z - cz) <= prim.length_mm / 2.0))
    sx, sy, sz = (s / 2.0 for s in prim.size_mm)
    return (np.abs(X - cx) <= sx) & (np.abs(Y - cy) <= sy) & (np.abs(Z - cz) <= sz)


def _check_fits(prim: Primitive, dims, voxel_size_mm) -> None:
    ext = prim.extent_mm()
    for ax in range(3):
        d = voxel_size_mm[ax]
        lo = prim.center_mm[ax] - ext[ax]
        hi = prim.center_mm[ax] + ext[ax]
        if lo < FOV_MARGIN_VOX * d or hi > (dims[ax] - 1 - FOV_MARGIN_VOX) * d:
            raise PhantomSpecError(
                f"{prim.shape} at {prim.center_mm} does not fit the FOV with a "
                f"{FOV_MARGIN_VOX}-voxel margin on axis {ax}"
            )


def render_phantom(spec: PhantomSpec, dims, voxel_size_mm):
    """Rasterize a phantom spec.

    Returns ``(chi, mask, labels)``: the susceptibility map (ppm), a brain
    mask (union of the primitives dilated by 2 voxels plus an enclosing
    ellipsoid head), and an integer ROI label volume.  Later primitives
    overwrite earlier ones where they overlap.
    """
    dims = tuple(int(n) for n in dims)
    vox = tuple(float(v) for v in voxel_size_mm)
    coords = [np.arange(n) * d for n, d in zip(dims, vox)]
    X = coords[0][:, None, None]
    Y = coords[1][None, :, None]
    Z = coords[2][None, None, :]

    chi = np.zeros(dims)
    labels = np.zeros(dims)
    union = np.zeros(dims, dtype=bool)
    for prim in spec.primitives:
        _check_fits(prim, dims, vox)
        sel = _inside(prim, X, Y, Z)
        chi[sel] = prim.chi_ppm
        if prim.label is not None:
            labels[sel] = prim.label
        union |= sel

    if union.any():
        dilated = ndimage.binary_dilation(union, iterations=2)
    else:
        dilated = union
    center = [(n - 1) / 2.0 * d for n, d in zip(dims, vox)]
    semi = [max((n / 2.0 - FOV_MARGIN_VOX) * d, d) for n, d in zip(dims, vox)]
    head = (((X - center[0]) / semi[0]) ** 2
            + ((Y - center[1]) / semi[1]) ** 2
            + ((Z - center[2]) / semi[2]) ** 2) <= 1.0
    mask = MaskVolume(dilated | head)
    return Volume3(chi, vox, "ppm"), mask, Volume3(labels, vox, "dimensionless")


def analytic_sphere_field(chi_ppm: float, radius_mm: float, r_vec_mm, b0_dir=(0, 0, 1)) -> float:
    """External local field of a uniform sphere; zero inside.

    Outside (r > R): ``(chi/3) (R/r)^3 (3 cos^2 theta - 1)`` with theta the
    angle between the offset and the field direction.  The interior local
    field vanishes under the Lorentz-corrected dipole convention.
    """
    r_vec = np.asarray(r_vec_mm, dtype=np.float64)
    b0 = np.asarray(b0_dir, dtype=np.float64)
    b0 = b0 / np.linalg.norm(b0)
    r = float(np.linalg.norm(r_vec))
    if r == 0.0:
        raise ValueError("field point must not coincide with the sphere center")
    if r <= radius_mm:
        return 0.0
    cos_t = float(np.dot(r_vec, b0)) / r
    return (chi_ppm / 3.0) * (radius_mm / r) ** 3 * (3.0 * cos_t ** 2 - 1.0)


def analytic_cylinder_field(chi_ppm: float, radius_mm: float, r_perp_mm: float,
                            azimuth_rad: float, tilt_to_b0_rad: float) -> float:
    """Local field of an infinite cylinder tilted by ``tilt_to_b0`` from B0.

    Inside: ``(chi/6) (3 cos^2 tilt - 1)``.  Outside: ``(chi/2) sin^2(tilt)
    (R/r_perp)^2 cos(2 az)`` with the azimuth measured from the projection
    of B0 in the plane perpendicular to the cylinder axis.
    """
    if r_perp_mm < 0:
        raise ValueError("r_perp must be nonnegative")
    if r_perp_mm <= radius_mm:
        return (chi_ppm / 6.0) * (3.0 * np.cos(tilt_to_b0_rad) ** 2 - 1.0)
    return (0.5 * chi_ppm * np.sin(tilt_to_b0_rad) ** 2
            * (radius_mm / r_perp_mm) ** 2 * np.cos(2.0 * azimuth_rad))


def brain_like_spec(dims=(64, 64, 64), voxel_size_mm=(1.0, 1.0, 1.0)) -> PhantomSpec:
    """Fixed five-blob composite used by the CLI's ``builtin:brain`` spec."""
    fov = [n * d for n, d in zip(dims, voxel_size_mm)]
    c = [f / 2.0 for f in fov]
    s = min(fov) / 64.0  # scale relative to a 64 mm reference box
    placements = {
        1: ((c[0] - 10 * s, c[1] + 6 * s, c[2]), 5.0 * s),
        2: ((c[0] + 10 * s, c[1] + 6 * s, c[2]), 4.0 * s),
        3: ((c[0], c[1] - 10 * s, c[2] + 6 * s), 4.0 * s),
        4: ((c[0] - 7 * s, c[1] - 4 * s, c[2] - 9 * s), 3.0 * s),
        5: ((c[0] + 7 * s, c[1] - 4 * s, c[2] - 9 * s), 3.0 * s),
    }
    prims = tuple(
        Primitive("sphere", center, _ROI_CHI_PPM[lab], radius_mm=r, label=lab)
        for lab, (center, r) in placements.items()
    )
    return PhantomSpec(prims)
