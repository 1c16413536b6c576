import math

import numpy as np
import pytest

from deepkriging.metrics import EvalRecord, evaluate_set, psnr, ssim


def test_psnr_closed_form(rng):
    a = rng.uniform(0, 200, (20, 20))
    assert psnr(a, a + 16) == pytest.approx(10 * math.log10(255**2 / 256), abs=1e-9)
    assert psnr(a, a + 16) == pytest.approx(24.0484, abs=1e-4)


def test_psnr_identical_is_inf(rng):
    a = rng.uniform(0, 255, (8, 8))
    assert psnr(a, a) == math.inf


def test_shave(rng):
    a = rng.uniform(0, 255, (10, 10))
    b = a.copy()
    b[0, :] += 100
    assert psnr(a, b, shave=1) == math.inf


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


def test_ssim_identical(textured):
    assert ssim(textured, textured) == 1.0


def test_ssim_inverted(textured):
    assert ssim(textured, 255 - textured) < 0.5


def test_ssim_matches_skimage(textured, rng):
    from skimage.metrics import structural_similarity

    noisy = textured + rng.normal(0, 10, textured.shape)
    ref = structural_similarity(textured, noisy, data_range=255, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False)
    # skimage averages over the full image with reflected borders; compare the
    # interior-only mean by cropping its map
    _, full = structural_similarity(textured, noisy, data_range=255, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False, full=True)
    assert ssim(textured, noisy) == pytest.approx(full[5:-5, 5:-5].mean(), abs=1e-10)
    assert abs(ref - ssim(textured, noisy)) < 0.02


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_evaluate_identity(desk_dir, tmp_path):
    from deepkriging.image_core import modcrop, to_luma
    from deepkriging.image_io import read_image
    from deepkriging.metrics import list_images

    # identity oracle: hand back each HR image in directory order
    hrs = [modcrop(to_luma(read_image(p)), 3) for p in list_images(desk_dir)]
    it = iter(hrs)
    res = evaluate_set(desk_dir, lambda lr, up, s: next(it), 3, name="identity", csv_path=tmp_path / "e.csv")
    assert all(r.psnr == math.inf and r.ssim == 1.0 for r in res.records)
    rows = (tmp_path / "e.csv").read_text().splitlines()
    assert rows[0] == "image,method,scale,psnr_db,ssim"
    assert rows[-1] == "mean,identity,3,inf,1.000000"


def test_evaluate_bicubic_is_stable(desk_dir, tmp_path):
    from deepkriging.metrics import bicubic_method

    a = evaluate_set(desk_dir, bicubic_method, 2, csv_path=tmp_path / "a.csv")
    b = evaluate_set(desk_dir, bicubic_method, 2, csv_path=tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert isinstance(a.records[0], EvalRecord) and 15 < a.mean_psnr < 60
