"""PSNR / SSIM with border shaving, and benchmark-set evaluation."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .image_core import degrade, downsample, modcrop, to_luma
from .image_io import read_image

PEAK = 255.0
IMAGE_SUFFIXES = (".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff", ".pgm", ".ppm")


def _shaved(a, b, shave):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if shave:
        if min(a.shape[:2]) <= 2 * shave:
            raise ValueError(f"image {a.shape} too small for shave={shave}")
        a = a[shave:-shave, shave:-shave]
        b = b[shave:-shave, shave:-shave]
    return a, b


def psnr(a, b, shave: int = 0) -> float:
    """10 log10(255^2 / MSE) over the shaved region; ``math.inf`` if identical."""
    a, b = _shaved(a, b, shave)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _valid_filter(img, g):
    out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    r = len(g) // 2
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def ssim(a, b, shave: int = 0, window: int = 11, sigma: float = 1.5) -> float:
    """Single-scale SSIM with a Gaussian window, averaged over valid positions."""
    a, b = _shaved(a, b, shave)
    if min(a.shape) < window:
        raise ValueError(f"image {a.shape} smaller than the {window}x{window} SSIM window")
    c1 = (0.01 * PEAK) ** 2
    c2 = (0.03 * PEAK) ** 2
    g = gaussian_window(window, sigma)
    mu_a = _valid_filter(a, g)
    mu_b = _valid_filter(b, g)
    s_aa = _valid_filter(a * a, g) - mu_a * mu_a
    s_bb = _valid_filter(b * b, g) - mu_b * mu_b
    s_ab = _valid_filter(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (s_aa + s_bb + c2)
    return float(np.mean(num / den))


@dataclass
class EvalRecord:
    image: str
    method: str
    scale: int
    psnr: float
    ssim: float


@dataclass
class EvalResult:
    records: list
    mean_psnr: float
    mean_ssim: float


def list_images(directory) -> list[str]:
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(IMAGE_SUFFIXES))
    return [os.path.join(directory, n) for n in names]


def evaluate_set(hr_dir, method, scale: int, name: str | None = None, csv_path=None) -> EvalResult:
    """Evaluate `method` on every image of `hr_dir` at one scale.

    ``method(lr, lr_up, scale)`` receives the low-resolution luma image and
    its bicubic upsampling and returns the super-resolved luma image.
    PSNR/SSIM are computed on luma with a `scale`-pixel shave.
    """
    paths = list_images(hr_dir)
    if not paths:
        raise FileNotFoundError(f"no images in {hr_dir}")
    name = name or getattr(method, "__name__", "method")
    records = []
    for path in paths:
        hr = modcrop(to_luma(read_image(path)), scale)
        lr = downsample(hr, scale)
        lr_up = degrade(hr, scale)
        sr = np.asarray(method(lr, lr_up, scale), dtype=np.float64)
        records.append(
            EvalRecord(os.path.basename(path), name, scale, psnr(sr, hr, scale), ssim(sr, hr, scale))
        )
    result = EvalResult(
        records,
        float(np.mean([r.psnr for r in records])),
        float(np.mean([r.ssim for r in records])),
    )
    if csv_path is not None:
        write_eval_csv(csv_path, result)
    return result


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.4f}"


def write_eval_csv(path, result: EvalResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "method", "scale", "psnr_db", "ssim"])
        for r in result.records:
            writer.writerow([r.image, r.method, r.scale, _fmt(r.psnr), f"{r.ssim:.6f}"])
        method = result.records[0].method
        writer.writerow(["mean", method, result.records[0].scale, _fmt(result.mean_psnr), f"{result.mean_ssim:.6f}"])


# Convenience methods for evaluate_set.


def bicubic_method(lr, lr_up, scale):
    return lr_up
