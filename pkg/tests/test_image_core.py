import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from deepkriging.image_core import (
    YCbCrImage,
    augment,
    bicubic_resize,
    degrade,
    downsample,
    extract_patches,
    keys_cubic,
    modcrop,
    patch_count,
    rgb_to_ycbcr,
    rotate,
    ycbcr_to_rgb,
)


def scalar_keys(t, a=-0.5):
    t = abs(t)
    if t <= 1:
        return (a + 2) * t**3 - (a + 3) * t**2 + 1
    if t < 2:
        return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
    return 0.0


def oracle_upsample_1d(v, s):
    """Scalar Keys interpolation with replicated edges, pixel-center geometry."""
    n = len(v)
    out = []
    for i in range(n * s):
        u = (i + 0.5) / s - 0.5
        left = int(np.floor(u)) - 1
        acc = 0.0
        for j in range(left, left + 4):
            acc += scalar_keys(u - j) * v[min(max(j, 0), n - 1)]
        out.append(acc)
    return np.array(out)


class TestColour:
    def test_white_black_points(self):
        assert rgb_to_ycbcr(np.full((1, 1, 3), 255.0)).y[0, 0] == pytest.approx(235.0)
        assert rgb_to_ycbcr(np.zeros((1, 1, 3))).y[0, 0] == pytest.approx(16.0)

    def test_red_luma(self):
        # 16 + 65.481 * 255 / 255
        assert rgb_to_ycbcr(np.array([[[255.0, 0, 0]]])).y[0, 0] == pytest.approx(16 + 65.481, abs=1e-9)

    def test_inverse_white_black(self):
        one = np.ones((1, 1))
        white = ycbcr_to_rgb(YCbCrImage(235 * one, 128 * one, 128 * one))
        black = ycbcr_to_rgb(YCbCrImage(16 * one, 128 * one, 128 * one))
        assert np.all(np.abs(white - 255) <= 1)
        assert np.all(np.abs(black) <= 1)

    def test_round_trip_1000_pixels(self, rng):
        px = rng.integers(0, 256, (1000, 1, 3)).astype(float)
        back = ycbcr_to_rgb(rgb_to_ycbcr(px))
        assert np.max(np.abs(np.round(back) - px)) < 0.51


class TestBicubic:
    def test_kernel_matches_scalar(self):
        t = np.linspace(-2.5, 2.5, 101)
        assert np.allclose(keys_cubic(t), [scalar_keys(v) for v in t], atol=1e-15)

    @given(c=st.floats(0, 255), s=st.sampled_from([2, 3, 4]), h=st.integers(3, 12), w=st.integers(3, 12))
    def test_constant_preserved(self, c, s, h, w):
        img = np.full((h * s, w * s), c)
        assert np.allclose(bicubic_resize(img, s), c, atol=1e-9)
        assert np.allclose(downsample(img, s), c, atol=1e-9)

    def test_scale_one_is_identity(self, textured):
        out = bicubic_resize(textured, 1)
        assert np.array_equal(out, textured) and out is not textured

    def test_ramp_against_scalar_oracle(self):
        ramp = np.add.outer(np.arange(4.0), 2 * np.arange(4.0)) * 10
        out = bicubic_resize(ramp, 2)
        rows = np.array([oracle_upsample_1d(r, 2) for r in ramp])
        want = np.array([oracle_upsample_1d(c, 2) for c in rows.T]).T
        assert np.allclose(out, want, atol=1e-12)

    def test_random_against_scalar_oracle(self, rng):
        img = rng.uniform(0, 255, (5, 7))
        out = bicubic_resize(img, 3)
        rows = np.array([oracle_upsample_1d(r, 3) for r in img])
        want = np.array([oracle_upsample_1d(c, 3) for c in rows.T]).T
        assert np.allclose(out, want, atol=1e-10)

    def test_upsampling_matches_pillow_interior(self, textured):
        from PIL import Image

        img = np.round(textured)
        ours = bicubic_resize(img, 2)
        pil = np.asarray(Image.fromarray(img.astype(np.float32), mode="F").resize((96, 96), Image.BICUBIC))
        # Pillow uses a = -0.5 with the same geometry; borders differ
        assert np.max(np.abs(ours[4:-4, 4:-4] - pil[4:-4, 4:-4])) < 1e-3


class TestDegrade:
    def test_constant(self):
        assert np.allclose(degrade(np.full((30, 30), 77.0), 3), 77.0)

    def test_dimension_contract(self):
        assert degrade(np.zeros((31, 31)), 3).shape == (30, 30)

    def test_checkerboard_destroyed(self):
        board = (np.indices((40, 40)).sum(0) % 2) * 255.0
        out = degrade(board, 2)
        assert out.var() < 0.05 * board.var()

    @pytest.mark.parametrize("shape,s,want", [((10, 10), 3, (9, 9)), ((9, 9), 3, (9, 9)), ((321, 481), 4, (320, 480))])
    def test_modcrop(self, shape, s, want):
        assert modcrop(np.zeros(shape), s).shape == want


class TestPatches:
    @pytest.mark.parametrize("shape,count", [((31, 31), 1), ((52, 52), 4), ((73, 94), 12)])
    def test_counts(self, shape, count):
        img = np.zeros(shape)
        assert len(extract_patches(img, img)) == count == patch_count(*shape)

    def test_offsets_and_alignment(self, rng):
        lr = rng.uniform(size=(52, 52))
        ps = extract_patches(lr, lr + 1)
        assert [s[1:] for s in ps.sources] == [(0, 0), (0, 21), (21, 0), (21, 21)]
        assert np.array_equal(ps.lr[3], lr[21:52, 21:52])
        assert np.array_equal(ps.hr, ps.lr + 1)

    def test_too_small(self):
        with pytest.raises(ValueError):
            extract_patches(np.zeros((30, 40)), np.zeros((30, 40)))

    @given(h=st.integers(31, 120), w=st.integers(31, 120))
    def test_patches_in_bounds(self, h, w):
        ps = extract_patches(np.zeros((h, w)), np.zeros((h, w)))
        for _, y, x in ps.sources:
            assert y + 31 <= h and x + 31 <= w


class TestAugment:
    def test_twelve_variants(self, textured):
        out = augment([textured])
        assert len(out) == 12
        assert sorted({(v.rotation, v.scale) for v in out}) == [
            (r, s) for r in (0, 90, 180, 270) for s in (2, 3, 4)
        ]

    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(0, 255)))
    def test_rotation_involution_and_shape(self, img):
        assert np.array_equal(rotate(rotate(img, 2), 2), img)
        assert rotate(img, 1).shape == img.shape[::-1]
