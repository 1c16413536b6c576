"""Image primitives: colorspace conversion, bicubic resampling, degradation,
patch extraction and training-set augmentation.

Images are plain 2-D ``float64`` arrays holding continuous intensities in
[0, 255]. Nothing here quantizes; rounding happens only when writing files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

# ITU-R BT.601, studio swing, for inputs in [0, 255]
_RGB2YCBCR = np.array(
    [
        [65.481, 128.553, 24.966],
        [-37.797, -74.203, 112.0],
        [112.0, -93.786, -18.214],
    ]
) / 255.0
_YCBCR_OFFSET = np.array([16.0, 128.0, 128.0])
_YCBCR2RGB = np.linalg.inv(_RGB2YCBCR)

SR_SCALES = (2, 3, 4)
ROTATIONS = (0, 1, 2, 3)  # multiples of 90 degrees, counter-clockwise


def as_image(img) -> np.ndarray:
    """Validate and return a 2-D float64 image."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image must have at least one pixel")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


@dataclass
class YCbCrImage:
    y: np.ndarray
    cb: np.ndarray
    cr: np.ndarray

    def __post_init__(self):
        if not (self.y.shape == self.cb.shape == self.cr.shape):
            raise ValueError(
                f"channel shapes differ: {self.y.shape}, {self.cb.shape}, {self.cr.shape}"
            )


def rgb_to_ycbcr(rgb) -> YCbCrImage:
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) RGB image, got shape {rgb.shape}")
    ycc = rgb @ _RGB2YCBCR.T + _YCBCR_OFFSET
    return YCbCrImage(ycc[..., 0], ycc[..., 1], ycc[..., 2])


def ycbcr_to_rgb(img: YCbCrImage) -> np.ndarray:
    ycc = np.stack([img.y, img.cb, img.cr], axis=-1) - _YCBCR_OFFSET
    return ycc @ _YCBCR2RGB.T


def to_luma(img) -> np.ndarray:
    """Y channel of an RGB image; gray images are returned as-is."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        return rgb_to_ycbcr(arr).y
    return as_image(arr)


# -- bicubic resampling ---------------------------------------------------


def keys_cubic(t, a: float = -0.5):
    """Keys cubic convolution kernel."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2 = t * t
    t3 = t2 * t
    near = ((a + 2) * t3 - (a + 3) * t2 + 1) * (t <= 1)
    far = (a * t3 - 5 * a * t2 + 8 * a * t - 4 * a) * ((t > 1) & (t <= 2))
    return near + far


def resize_matrix(in_len: int, out_len: int, scale: float, antialias: bool = True) -> np.ndarray:
    """Dense (out_len, in_len) operator resampling a 1-D signal by `scale`.

    Output sample u (1-based) sits at input coordinate u/scale + (1 - 1/scale)/2,
    the pixel-area-aligned convention of MATLAB's imresize. When shrinking
    with antialiasing the kernel is stretched by 1/scale. Out-of-range taps
    replicate the edge sample.
    """
    if antialias and scale < 1:
        width = 4.0 / scale

        def kernel(t):
            return scale * keys_cubic(scale * t)
    else:
        width = 4.0
        kernel = keys_cubic

    u = np.arange(1, out_len + 1, dtype=np.float64)
    x = u / scale + 0.5 * (1.0 - 1.0 / scale)
    left = np.floor(x - width / 2.0)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = kernel(x[:, None] - idx)
    w /= w.sum(axis=1, keepdims=True)
    idx = np.clip(idx.astype(np.int64) - 1, 0, in_len - 1)

    op = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(op, (rows, idx.ravel()), w.ravel())
    return op


def bicubic_resize(img, scale) -> np.ndarray:
    """Resize a 2-D image by a positive (rational) scale factor.

    Output dimensions are ``round(dim * scale)``.
    """
    img = as_image(img)
    scale = Fraction(scale).limit_denominator(10_000) if not isinstance(scale, Fraction) else scale
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    h, w = img.shape
    out_h = int(round(h * scale))
    out_w = int(round(w * scale))
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resizing {img.shape} by {scale} gives an empty image")
    if scale == 1:
        return img.copy()
    s = float(scale)
    rows = resize_matrix(h, out_h, s)
    cols = resize_matrix(w, out_w, s)
    return rows @ img @ cols.T


def modcrop(img, s: int) -> np.ndarray:
    img = np.asarray(img)
    if s < 1:
        raise ValueError(f"modcrop factor must be >= 1, got {s}")
    h = img.shape[0] - img.shape[0] % s
    w = img.shape[1] - img.shape[1] % s
    if h == 0 or w == 0:
        raise ValueError(f"modcrop of {img.shape[:2]} by {s} is empty")
    return img[:h, :w]


def downsample(hr, s: int) -> np.ndarray:
    """Low-resolution observation: bicubic shrink of the modcropped image by 1/s."""
    hr = modcrop(as_image(hr), s)
    return bicubic_resize(hr, Fraction(1, s))


def degrade(hr, s: int) -> np.ndarray:
    """Bicubic down- then up-sampling; same size as ``modcrop(hr, s)``."""
    return bicubic_resize(downsample(hr, s), s)


# -- patches and augmentation ---------------------------------------------


@dataclass
class PatchSet:
    """Aligned (low-res-upsampled, high-res) patch pairs, stacked along axis 0."""

    lr: np.ndarray
    hr: np.ndarray
    sources: list = field(default_factory=list)

    def __post_init__(self):
        if self.lr.shape != self.hr.shape:
            raise ValueError("lr and hr patch stacks differ in shape")
        if len(self.sources) != len(self.lr):
            raise ValueError("one source id is required per patch")

    def __len__(self):
        return len(self.lr)

    @classmethod
    def concat(cls, sets):
        sets = list(sets)
        if not sets:
            raise ValueError("nothing to concatenate")
        return cls(
            np.concatenate([p.lr for p in sets]),
            np.concatenate([p.hr for p in sets]),
            [s for p in sets for s in p.sources],
        )


def patch_offsets(length: int, size: int, stride: int) -> list[int]:
    return list(range(0, length - size + 1, stride))


def patch_count(h: int, w: int, size: int = 31, stride: int = 21) -> int:
    if h < size or w < size:
        return 0
    return ((h - size) // stride + 1) * ((w - size) // stride + 1)


def extract_patches(lr, hr, size: int = 31, stride: int = 21, source=None) -> PatchSet:
    lr = np.asarray(lr, dtype=np.float64)
    hr = np.asarray(hr, dtype=np.float64)
    if lr.shape != hr.shape:
        raise ValueError(f"lr {lr.shape} and hr {hr.shape} must have the same size")
    h, w = hr.shape
    if h < size or w < size:
        raise ValueError(f"image {hr.shape} is smaller than the {size}x{size} patch")
    ys = patch_offsets(h, size, stride)
    xs = patch_offsets(w, size, stride)
    lr_p = np.stack([lr[y:y + size, x:x + size] for y in ys for x in xs])
    hr_p = np.stack([hr[y:y + size, x:x + size] for y in ys for x in xs])
    sources = [(source, y, x) for y in ys for x in xs]
    return PatchSet(lr_p, hr_p, sources)


def rotate(img, quarter_turns: int) -> np.ndarray:
    return np.ascontiguousarray(np.rot90(img, quarter_turns))


@dataclass(frozen=True)
class Variant:
    image: np.ndarray
    rotation: int  # degrees
    scale: int
    source: object = None


def augment(images, scales=SR_SCALES, rotations=ROTATIONS) -> list[Variant]:
    """Fixed-grade augmentation: every rotation of every image, paired with
    each super-resolution factor. One image yields 4 x 3 = 12 variants."""
    out = []
    for i, img in enumerate(images):
        for k in rotations:
            rot = rotate(img, k)
            for s in scales:
                out.append(Variant(rot, 90 * k, s, i))
    return out
