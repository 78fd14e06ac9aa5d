import numpy as np
import pytest

from qsmkit import (
    RotationMatrix,
    Volume3,
    dipole_kernel,
    field_from_phase,
    forward_field,
    kernel_from_volume,
    kernel_to_volume,
    phase_from_field,
    resample_rotated,
    rotated_kernel,
)
from qsmkit.dipole import GAMMA_BAR_MHZ_PER_T
from qsmkit.errors import DimensionMismatchError
from qsmkit.phantom import analytic_sphere_field

from conftest import SPHERE_CENTER, SPHERE_RADIUS


def canonical_sphere_samples():
    """Axis and cube-diagonal directions away from the magic-angle cone,
    radii 1.5R / 2R / 2.5R; each sample snaps to the nearest grid voxel."""
    dirs = [(0, 0, 1), (0, 0, -1), (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0),
            (1, 1, 1), (1, -1, 1), (-1, 1, 1), (-1, -1, 1),
            (1, 1, -1), (1, -1, -1), (-1, 1, -1), (-1, -1, -1)]
    center = np.asarray(SPHERE_CENTER)
    samples = []
    for d in dirs:
        u = np.asarray(d, float)
        u /= np.linalg.norm(u)
        if abs(3.0 * u[2] ** 2 - 1.0) < 0.25:
            continue  # relative error is meaningless near the zero cone
        for r in (1.5 * SPHERE_RADIUS, 2.0 * SPHERE_RADIUS, 2.5 * SPHERE_RADIUS):
            iv = tuple(int(round(x)) for x in center + u * r)
            samples.append(iv)
    return samples


class TestKernelValues:
    def test_parallel_limit(self):
        d = dipole_kernel((16, 16, 16), (1, 1, 1), (0, 0, 1)).data
        # kz axis (excluding DC): D = 1/3 - 1 = -2/3
        assert np.allclose(d[0, 0, 1:], -2.0 / 3.0, atol=1e-12)

    def test_perpendicular_limit(self):
        d = dipole_kernel((16, 16, 16), (1, 1, 1), (0, 0, 1)).data
        assert np.allclose(d[1:, 0, 0], 1.0 / 3.0, atol=1e-12)
        assert np.allclose(d[0, 1:, 0], 1.0 / 3.0, atol=1e-12)

    def test_magic_angle_zero(self):
        # voxel sizes chosen so the grid point (1, 0, 1) sits exactly on the
        # cone cos^2(theta) = 1/3, i.e. kx^2 = 2 kz^2
        d = dipole_kernel((16, 16, 16), (1.0 / np.sqrt(2.0), 1.0, 1.0), (0, 0, 1)).data
        assert abs(d[1, 0, 1]) < 1e-14

    def test_range(self):
        d = dipole_kernel((32, 32, 32), (1, 1, 1), (0.3, -0.5, 0.8)).data
        assert d.min() >= -2.0 / 3.0 - 1e-12
        assert d.max() <= 1.0 / 3.0 + 1e-12

    def test_scale_invariance(self):
        # D depends on k only through its direction: doubling the index
        # keeps the direction (below Nyquist)
        d = dipole_kernel((32, 32, 32), (1, 1, 1), (0.2, 0.4, 0.9)).data
        for idx in [(1, 2, 3), (2, 0, 5), (4, 4, 1)]:
            i, j, k = idx
            assert d[2 * i, 2 * j, 2 * k] == pytest.approx(d[i, j, k], abs=1e-12)

    def test_even_symmetry_exact(self):
        d = dipole_kernel((12, 10, 8), (1, 1, 1),
                          RotationMatrix.about_axis("x", 20.0).mat.T @ np.array([0, 0, 1.0])).data
        neg = tuple((-np.arange(n)) % n for n in d.shape)
        assert np.array_equal(d, d[np.ix_(*neg)])

    def test_dc_value(self):
        d = dipole_kernel((8, 8, 8), (1, 1, 1), (0, 0, 1))
        assert d.data[0, 0, 0] == 0.0
        assert d.dc_value == 0.0

    def test_zero_b0_rejected(self):
        with pytest.raises(ValueError):
            dipole_kernel((8, 8, 8), (1, 1, 1), (0, 0, 0))

    def test_b0_normalized(self):
        d1 = dipole_kernel((8, 8, 8), (1, 1, 1), (0, 0, 1)).data
        d2 = dipole_kernel((8, 8, 8), (1, 1, 1), (0, 0, 2)).data
        assert np.array_equal(d1, d2)


class TestRotatedKernel:
    def test_identity_matches_z(self):
        dz = dipole_kernel((16, 16, 16), (1, 1, 1), (0, 0, 1)).data
        dr = rotated_kernel((16, 16, 16), (1, 1, 1), RotationMatrix.identity()).data
        assert np.array_equal(dz, dr)

    def test_90deg_about_x_is_y_kernel(self):
        dr = rotated_kernel((16, 16, 16), (1, 1, 1),
                            RotationMatrix.about_axis("x", 90.0))
        assert np.allclose(np.abs(np.asarray(dr.b0_dir)), [0, 1, 0], atol=1e-12)
        # zeros lie on the cone about y: on the ky axis D = -2/3, transverse 1/3
        assert np.allclose(dr.data[0, 1:, 0], -2.0 / 3.0, atol=1e-12)
        assert np.allclose(dr.data[1:, 0, 0], 1.0 / 3.0, atol=1e-12)
        assert np.allclose(dr.data[0, 0, 1:], 1.0 / 3.0, atol=1e-12)

    def test_range_preserved_any_rotation(self):
        R = RotationMatrix.about_axis("x", 33.0)
        d = rotated_kernel((24, 24, 24), (1, 1, 1), R).data
        assert -2.0 / 3.0 - 1e-12 <= d.min() and d.max() <= 1.0 / 3.0 + 1e-12


class TestForwardField:
    def test_zero_chi(self, kernel_z):
        z = Volume3(np.zeros((64, 64, 64)), (1, 1, 1), "ppm")
        assert np.all(forward_field(z, kernel_z).data == 0.0)

    def test_sphere_interior_mean(self, sphere_phantom, sphere_field):
        ix = np.arange(64)
        X, Y, Z = np.meshgrid(ix, ix, ix, indexing="ij")
        c = SPHERE_CENTER
        r2 = (X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2
        interior = r2 <= (SPHERE_RADIUS - 1.5) ** 2
        assert abs(sphere_field.data[interior].mean()) < 0.01

    def test_sphere_on_axis_2r(self, sphere_field):
        # analytic: (chi/3)(R/r)^3 (3cos^2-1) = 1/12 at theta=0, r=2R
        num = sphere_field.data[32, 32, 48]
        assert num == pytest.approx(1.0 / 12.0, rel=0.05)

    def test_sphere_perpendicular_2r(self, sphere_field):
        num = sphere_field.data[48, 32, 32]
        assert num == pytest.approx(-1.0 / 24.0, rel=0.05)

    def test_sphere_canonical_samples(self, sphere_field):
        c = np.asarray(SPHERE_CENTER)
        for iv in canonical_sphere_samples():
            rv = np.asarray(iv, float) - c
            ana = analytic_sphere_field(1.0, SPHERE_RADIUS, rv)
            assert sphere_field.data[iv] == pytest.approx(ana, rel=0.05), iv

    def test_linearity(self, kernel_z):
        rng = np.random.default_rng(0)
        a = Volume3(rng.normal(size=(64, 64, 64)), (1, 1, 1), "ppm")
        b = Volume3(rng.normal(size=(64, 64, 64)), (1, 1, 1), "ppm")
        lhs = forward_field(Volume3(2.0 * a.data - 3.0 * b.data, (1, 1, 1), "ppm"),
                            kernel_z).data
        rhs = 2.0 * forward_field(a, kernel_z).data - 3.0 * forward_field(b, kernel_z).data
        assert np.abs(lhs - rhs).max() < 1e-9 * np.abs(rhs).max()

    def test_mean_free_output(self, sphere_field):
        assert abs(sphere_field.data.mean()) < 1e-9

    def test_dims_mismatch(self, kernel_z):
        v = Volume3(np.zeros((8, 8, 8)), (1, 1, 1), "ppm")
        with pytest.raises(DimensionMismatchError):
            forward_field(v, kernel_z)

    def test_rotation_equivariance(self):
        # forward(rotate(chi, R), D_z) ~ rotate(forward(chi, rotated_kernel(R^T)), R)
        n = 64
        ix = np.arange(n)
        X, Y, Z = np.meshgrid(ix, ix, ix, indexing="ij")
        c = (n - 1) / 2.0
        blob = np.exp(-((X - c) ** 2 + (Y - c) ** 2 + (Z - c) ** 2) / (2 * 5.0 ** 2))
        chi = Volume3(blob, (1, 1, 1), "ppm")
        R = RotationMatrix.about_axis("y", 25.0)
        dz = dipole_kernel((n,) * 3, (1, 1, 1), (0, 0, 1))
        lhs = forward_field(resample_rotated(chi, R), dz)
        dr = rotated_kernel((n,) * 3, (1, 1, 1), R.T)
        rhs = resample_rotated(forward_field(chi, dr), R)
        interior = ((X - c) ** 2 + (Y - c) ** 2 + (Z - c) ** 2) <= 24.0 ** 2
        tol = 0.05 * np.abs(lhs.data).max()
        assert np.abs(lhs.data - rhs.data)[interior].max() < tol


class TestPhaseConversion:
    def test_zero_phase(self):
        p = Volume3(np.zeros((8, 8, 8)), (1, 1, 1), "radians")
        assert np.all(field_from_phase(p, 0.025, 3.0).data == 0.0)

    def test_one_ppm_at_te25_b3(self):
        expected_rad = 2.0 * np.pi * GAMMA_BAR_MHZ_PER_T * 3.0 * 0.025
        assert expected_rad == pytest.approx(20.06, abs=0.01)
        f = Volume3(np.ones((4, 4, 4)), (1, 1, 1), "ppm")
        ph = phase_from_field(f, 0.025, 3.0)
        assert ph.data[0, 0, 0] == pytest.approx(expected_rad, rel=1e-12)
        back = field_from_phase(ph, 0.025, 3.0)
        assert np.array_equal(back.data, f.data)

    def test_doubling_te_halves_ppm(self):
        rng = np.random.default_rng(1)
        p = Volume3(rng.normal(size=(6, 6, 6)), (1, 1, 1), "radians")
        f1 = field_from_phase(p, 0.020, 3.0).data
        f2 = field_from_phase(p, 0.040, 3.0).data
        assert np.allclose(f1, 2.0 * f2, rtol=1e-12)

    def test_nonpositive_te_b0_rejected(self):
        p = Volume3(np.zeros((4, 4, 4)), (1, 1, 1), "radians")
        with pytest.raises(ValueError):
            field_from_phase(p, 0.0, 3.0)
        with pytest.raises(ValueError):
            field_from_phase(p, 0.025, -1.0)


class TestKernelExport:
    def test_volume_roundtrip(self, tmp_path, kernel_z):
        from qsmkit.io import read_qvol, write_qvol

        v = kernel_to_volume(kernel_z)
        assert v.unit_tag == "dimensionless"
        p = write_qvol(tmp_path / "kern.qvol", v)
        back = kernel_from_volume(read_qvol(p), kernel_z.b0_dir)
        assert np.abs(back.data - kernel_z.data).max() < 1e-7  # float32 file
