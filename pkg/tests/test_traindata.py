import numpy as np
import pytest
import scipy.fft as sfft
from hypothesis import given, settings
from hypothesis import strategies as st

from qsmkit import (
    LossWeights,
    MaskVolume,
    RotationMatrix,
    Volume3,
    apply_mask,
    augment,
    dipole_kernel,
    extract_patches,
    forward_field,
    loss_gradient,
    loss_l1,
    loss_model,
    make_label_pair,
    patch_positions,
    read_qpatch,
    resample_rotated,
    total_loss,
    write_qpatch,
)
from qsmkit.errors import ConfigError, DimensionMismatchError


def ppm(data, voxel=(1.0, 1.0, 1.0)):
    return Volume3(np.asarray(data, float), voxel, "ppm")


def blob_volume(n=32, sigma=6.0, amp=0.1):
    ix = np.arange(n, dtype=float)
    X, Y, Z = np.meshgrid(ix, ix, ix, indexing="ij")
    c = (n - 1) / 2.0
    return ppm(amp * np.exp(-((X - c) ** 2 + (Y - c) ** 2 + (Z - c) ** 2)
                            / (2 * sigma ** 2)))


def ball_mask(n=32, radius=13.0):
    ix = np.arange(n, dtype=float)
    X, Y, Z = np.meshgrid(ix, ix, ix, indexing="ij")
    c = (n - 1) / 2.0
    return MaskVolume(((X - c) ** 2 + (Y - c) ** 2 + (Z - c) ** 2) <= radius ** 2)


# ------------------------------------------------------------ label pairs


class TestMakeLabelPair:
    def test_identity_rotation(self):
        chi = blob_volume()
        field = ppm(np.random.default_rng(0).normal(size=chi.dims))
        mask = ball_mask()
        inp, label, m = make_label_pair(chi, RotationMatrix.identity(), field, mask)
        assert np.array_equal(label.data, apply_mask(chi, mask).data)
        assert np.array_equal(inp.data, apply_mask(field, mask).data)
        assert np.array_equal(m.data, mask.data)

    def test_label_zero_outside_rotated_mask(self):
        chi = blob_volume()
        field = ppm(np.ones(chi.dims))
        mask = ball_mask()
        R = RotationMatrix.about_axis("x", 17.0)
        inp, label, m = make_label_pair(chi, R, field, mask)
        assert np.all(label.data[~m.data] == 0.0)
        assert np.all(inp.data[~m.data] == 0.0)

    def test_end_to_end_rotate_back(self, sphere_phantom):
        # simulate a smooth truth at orientation R, reconstruct exactly
        # (noiseless multi-orientation), rotate back: the label agrees with
        # rotate(truth, R^T) up to interpolation and mean referencing
        from qsmkit import cosmos
        from conftest import make_orientation_rotations, simulate_scans

        chi = blob_volume(n=48, sigma=7.0, amp=0.2)
        mask = ball_mask(n=48, radius=20.0)
        scans = simulate_scans(chi, mask, make_orientation_rotations())
        rec = cosmos(scans)
        R = RotationMatrix.about_axis("x", 20.0)
        field_unreg = scans[0].field
        _, label, m = make_label_pair(rec, R, field_unreg, mask)
        expected = apply_mask(resample_rotated(chi, R.T), m)
        # compare away from the rotated mask boundary, where interpolation
        # smears the masked edge
        from scipy import ndimage

        sel = ndimage.binary_erosion(m.data, iterations=3)
        a = label.data[sel] - label.data[sel].mean()
        b = expected.data[sel] - expected.data[sel].mean()
        assert np.abs(a - b).max() < 0.05 * np.abs(chi.data).max()


class TestAugment:
    def test_zero_angle(self):
        label = blob_volume()
        mask = ball_mask()
        inp, new_label, new_mask = augment(label, mask, 0.0, "x")
        assert np.array_equal(new_label.data, apply_mask(label, mask).data)
        kern = dipole_kernel(label.dims, label.voxel_size_mm, (0, 0, 1))
        expected = apply_mask(forward_field(new_label, kern), mask)
        assert np.array_equal(inp.data, expected.data)

    def test_forward_consistency(self):
        label = blob_volume()
        mask = ball_mask()
        inp, new_label, new_mask = augment(label, mask, 15.0, "y")
        kern = dipole_kernel(label.dims, label.voxel_size_mm, (0, 0, 1))
        conv = forward_field(new_label, kern)
        diff = np.abs(conv.data - inp.data)[new_mask.data]
        assert diff.max() < 1e-9

    def test_doubles_dataset(self):
        sources = [blob_volume(amp=a) for a in (0.1, 0.2)]
        mask = ball_mask()
        pairs = [(apply_mask(s, mask), mask) for s in sources]
        for s in sources:
            inp, lab, m = augment(s, mask, 12.0, "x")
            pairs.append((lab, m))
        assert len(pairs) == 2 * len(sources)

    def test_angle_out_of_protocol(self):
        with pytest.raises(ConfigError):
            augment(blob_volume(), ball_mask(), 31.0, "x")

    def test_bad_axis(self):
        with pytest.raises(ConfigError):
            augment(blob_volume(), ball_mask(), 10.0, "z")


# ---------------------------------------------------------------- patches


def oracle_positions(n, patch_size, stride):
    """Independent enumeration: stride grid from 0 over valid starts, the
    final start clamped flush so the last patch touches the far edge."""
    pos = []
    p = 0
    while p <= n - patch_size:
        pos.append(p)
        p += stride
    pos[-1] = n - patch_size
    return sorted(set(pos))


class TestPatchPositions:
    def test_single_patch(self):
        assert patch_positions(64, 64, 21) == [0]

    def test_128_gives_four_positions(self):
        assert patch_positions(128, 64, 21) == [0, 21, 42, 64]

    def test_127_keeps_unclamped_grid(self):
        assert patch_positions(127, 64, 21) == [0, 21, 42, 63]

    @pytest.mark.parametrize("n", [64, 85, 100, 127, 128, 150, 192])
    def test_matches_oracle(self, n):
        assert patch_positions(n, 64, 21) == oracle_positions(n, 64, 21)

    @pytest.mark.parametrize("n", [64, 127, 128, 150])
    def test_union_covers_axis(self, n):
        cover = np.zeros(n, int)
        for p in patch_positions(n, 64, 21):
            cover[p:p + 64] += 1
        assert cover.min() >= 1

    def test_interior_coverage_unclamped(self):
        # on a grid where 63 stays a valid start, interior voxels see
        # ceil(64/21) = 4 overlapping patches
        cover = np.zeros(127, int)
        for p in patch_positions(127, 64, 21):
            cover[p:p + 64] += 1
        assert cover[63] == 4

    def test_too_small_axis(self):
        with pytest.raises(DimensionMismatchError):
            patch_positions(32, 64, 21)


class TestExtractPatches:
    def test_single_patch_volume(self):
        n = 64
        rng = np.random.default_rng(0)
        f = ppm(rng.normal(size=(n, n, n)))
        y = ppm(rng.normal(size=(n, n, n)))
        ds = extract_patches(f, y, MaskVolume(np.ones((n, n, n), bool)))
        assert ds.count == 1
        assert ds.records[0].origin == (0, 0, 0)
        assert np.array_equal(ds.records[0].input, f.data)

    def test_128_cube_yields_64_patches(self):
        n = 128
        rng = np.random.default_rng(1)
        f = ppm(rng.normal(size=(n, n, n)))
        y = ppm(rng.normal(size=(n, n, n)))
        ds = extract_patches(f, y, MaskVolume(np.ones((n, n, n), bool)))
        assert ds.stride == 21
        assert ds.count == len(oracle_positions(n, 64, 21)) ** 3 == 64

    def test_empty_mask_patches_dropped(self):
        n = 128
        f = ppm(np.zeros((n, n, n)))
        y = ppm(np.zeros((n, n, n)))
        m = np.zeros((n, n, n), bool)
        m[:40, :40, :40] = True  # only patches near the origin survive
        ds = extract_patches(f, y, MaskVolume(m))
        assert 0 < ds.count < 64
        for rec in ds.records:
            assert rec.mask.any()

    def test_patch_dims_and_bounds(self):
        n = 100
        rng = np.random.default_rng(2)
        f = ppm(rng.normal(size=(n, n, n)))
        ds = extract_patches(f, f, MaskVolume(np.ones((n, n, n), bool)))
        for rec in ds.records:
            assert rec.input.shape == (64, 64, 64)
            assert rec.label.shape == (64, 64, 64)
            assert rec.mask.shape == (64, 64, 64)
            for o in rec.origin:
                assert 0 <= o <= n - 64

    def test_volume_smaller_than_patch(self):
        f = ppm(np.zeros((32, 32, 32)))
        with pytest.raises(DimensionMismatchError):
            extract_patches(f, f, MaskVolume(np.ones((32, 32, 32), bool)))


class TestQpatchFormat:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        n = 70
        f = ppm(rng.normal(size=(n, n, n)).astype(np.float32))
        y = ppm(rng.normal(size=(n, n, n)).astype(np.float32))
        m = MaskVolume(rng.random((n, n, n)) > 0.2)
        ds = extract_patches(f, y, m, patch_size=32, overlap=0.5)
        path = write_qpatch(tmp_path / "d.qpatch", ds)
        back = read_qpatch(path)
        assert back.patch_size == 32
        assert back.count == ds.count
        assert back.voxel_size_mm == ds.voxel_size_mm
        for a, b in zip(ds.records, back.records):
            assert np.array_equal(a.input.astype(np.float32), b.input.astype(np.float32))
            assert np.array_equal(a.mask, b.mask)

    def test_header_line_is_json(self, tmp_path):
        import json

        f = ppm(np.zeros((64, 64, 64)))
        ds = extract_patches(f, f, MaskVolume(np.ones((64, 64, 64), bool)))
        path = write_qpatch(tmp_path / "d.qpatch", ds)
        with open(path, "rb") as fh:
            header = json.loads(fh.readline())
        assert header["version"] == 1
        assert header["patch_size"] == 64
        assert header["count"] == 1
        assert header["voxel_size_mm"] == [1.0, 1.0, 1.0]


# ------------------------------------------------------------------ losses


def direct_circular_convolve(a: np.ndarray, psf: np.ndarray) -> np.ndarray:
    """Brute-force circular convolution by shifting the point response."""
    out = np.zeros_like(a)
    it = np.ndindex(a.shape)
    for idx in it:
        v = a[idx]
        if v != 0.0:
            out += v * np.roll(psf, idx, axis=(0, 1, 2))
    return out


@pytest.fixture(scope="module")
def kernel_16():
    return dipole_kernel((16, 16, 16), (1, 1, 1), (0, 0, 1))


class TestLossModel:
    def test_identity(self, kernel_16):
        rng = np.random.default_rng(4)
        y = ppm(rng.normal(size=(16, 16, 16)))
        assert loss_model(y, y, kernel_16) == 0.0

    def test_delta_bump_vs_direct_convolution(self):
        # single-voxel bump: the convolution is the shifted point response
        n = 32
        kern = dipole_kernel((n, n, n), (1, 1, 1), (0, 0, 1))
        psf = sfft.ifftn(kern.data).real
        rng = np.random.default_rng(5)
        y = rng.normal(size=(n, n, n))
        amp = 0.7
        chi = y.copy()
        chi[10, 17, 12] += amp
        direct = amp * np.roll(psf, (10, 17, 12), axis=(0, 1, 2))
        sl = (slice(5, n - 5),) * 3
        expected = np.abs(direct[sl]).mean()
        got = loss_model(ppm(chi), ppm(y), kern)
        assert got == pytest.approx(expected, abs=1e-9)

    def test_fft_equals_direct_convolution_16(self, kernel_16):
        rng = np.random.default_rng(6)
        chi = rng.normal(size=(16, 16, 16))
        y = rng.normal(size=(16, 16, 16))
        psf = sfft.ifftn(kernel_16.data).real
        direct = direct_circular_convolve(chi - y, psf)
        sl = (slice(5, 11),) * 3
        expected = np.abs(direct[sl]).mean()
        assert loss_model(ppm(chi), ppm(y), kernel_16) == pytest.approx(expected, abs=1e-9)

    def test_translation_invariance(self, kernel_16):
        rng = np.random.default_rng(7)
        delta = rng.normal(size=(16, 16, 16))
        y1 = rng.normal(size=(16, 16, 16))
        y2 = rng.normal(size=(16, 16, 16))
        l1 = loss_model(ppm(y1 + delta), ppm(y1), kernel_16)
        l2 = loss_model(ppm(y2 + delta), ppm(y2), kernel_16)
        assert l1 == pytest.approx(l2, rel=1e-12)

    def test_volume_too_small_after_discard(self):
        kern = dipole_kernel((8, 8, 8), (1, 1, 1), (0, 0, 1))
        v = ppm(np.zeros((8, 8, 8)))
        with pytest.raises(DimensionMismatchError):
            loss_model(v, v, kern)


class TestLossL1:
    def test_identity(self):
        y = ppm(np.random.default_rng(8).normal(size=(8, 8, 8)))
        assert loss_l1(y, y) == 0.0

    def test_constant_offset(self):
        y = ppm(np.random.default_rng(9).normal(size=(8, 8, 8)))
        c = -0.42
        assert loss_l1(y.with_data(y.data + c), y) == pytest.approx(abs(c), rel=1e-14)

    def test_matches_hand_rolled_sum(self):
        rng = np.random.default_rng(10)
        a = rng.normal(size=(8, 8, 8))
        b = rng.normal(size=(8, 8, 8))
        acc = 0.0
        for i in range(8):
            for j in range(8):
                for k in range(8):
                    acc += abs(a[i, j, k] - b[i, j, k])
        acc /= 8 ** 3
        assert loss_l1(ppm(a), ppm(b)) == pytest.approx(acc, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            loss_l1(ppm(np.zeros((8, 8, 8))), ppm(np.zeros((4, 4, 4))))


def oracle_gradient_loss(chi, y, psf, discard=5):
    """Brute-force six-term gradient loss with explicit loops."""
    def fdiff(arr, ax):
        g = np.zeros_like(arr)
        n = arr.shape[ax]
        for idx in np.ndindex(arr.shape):
            if idx[ax] < n - 1:
                nxt = list(idx)
                nxt[ax] += 1
                g[idx] = arr[tuple(nxt)] - arr[idx]
        return g

    total = 0.0
    diff = chi - y
    for ax in range(3):
        total += np.abs(fdiff(diff, ax)).mean()
    conv = direct_circular_convolve(diff, psf)
    sl = tuple(slice(discard, n - discard) for n in chi.shape)
    conv = conv[sl]
    for ax in range(3):
        total += np.abs(fdiff(conv, ax)).mean()
    return total


class TestLossGradient:
    def test_identity(self, kernel_16):
        y = ppm(np.random.default_rng(11).normal(size=(16, 16, 16)))
        assert loss_gradient(y, y, kernel_16) == 0.0

    def test_constant_offset_invisible(self, kernel_16):
        y = ppm(np.random.default_rng(12).normal(size=(16, 16, 16)))
        x = y.with_data(y.data + 3.3)
        assert loss_gradient(x, y, kernel_16) == pytest.approx(0.0, abs=1e-12)

    def test_single_bump_vs_brute_force(self, kernel_16):
        rng = np.random.default_rng(13)
        y = rng.normal(size=(16, 16, 16))
        chi = y.copy()
        chi[7, 8, 6] += 0.9
        psf = sfft.ifftn(kernel_16.data).real
        expected = oracle_gradient_loss(chi, y, psf)
        assert loss_gradient(ppm(chi), ppm(y), kernel_16) == pytest.approx(
            expected, abs=1e-12)


class TestTotalLoss:
    def test_identity_with_defaults(self, kernel_16):
        y = ppm(np.random.default_rng(14).normal(size=(16, 16, 16)))
        assert total_loss(y, y, kernel_16, LossWeights()) == 0.0

    def test_l1_only_weights(self, kernel_16):
        rng = np.random.default_rng(15)
        chi = ppm(rng.normal(size=(16, 16, 16)))
        y = ppm(rng.normal(size=(16, 16, 16)))
        w = LossWeights(0.0, 1.0, 0.0)
        assert total_loss(chi, y, kernel_16, w) == loss_l1(chi, y)

    def test_compositional_identity(self, kernel_16):
        rng = np.random.default_rng(16)
        chi = ppm(rng.normal(size=(16, 16, 16)))
        y = ppm(rng.normal(size=(16, 16, 16)))
        w = LossWeights(1.0, 1.0, 0.1)
        hand = (w.w1 * loss_model(chi, y, kernel_16)
                + w.w2 * loss_l1(chi, y)
                + w.w3 * loss_gradient(chi, y, kernel_16))
        assert total_loss(chi, y, kernel_16, w) == pytest.approx(hand, abs=1e-12)

    def test_weight_validation(self):
        with pytest.raises(ConfigError):
            LossWeights(-1.0, 1.0, 0.1)
        with pytest.raises(ConfigError):
            LossWeights(0.0, 0.0, 0.0)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_losses_nonnegative(self, kernel_16, seed):
        rng = np.random.default_rng(seed)
        chi = ppm(rng.normal(size=(16, 16, 16)))
        y = ppm(rng.normal(size=(16, 16, 16)))
        assert loss_model(chi, y, kernel_16) >= 0.0
        assert loss_l1(chi, y) >= 0.0
        assert loss_gradient(chi, y, kernel_16) >= 0.0
        assert total_loss(chi, y, kernel_16) >= 0.0
