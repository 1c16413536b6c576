"""Reading and writing 8-bit images.

Binary PGM/PPM (P5/P6, maxval 255) is handled by a small self-contained codec.
Everything else (PNG, BMP, JPEG) goes through Pillow.
"""

from __future__ import annotations

import os
import re

import numpy as np

_PNM_MAGIC = {b"P5": 1, b"P6": 3}


class ImageFormatError(ValueError):
    pass


def _read_header_tokens(buf: bytes, count: int):
    """Return `count` whitespace separated header tokens and the payload offset."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*").match(buf, pos)
        pos = m.end()
        m = re.compile(rb"\S+").match(buf, pos)
        if m is None:
            raise ImageFormatError("truncated PNM header")
        tokens.append(m.group())
        pos = m.end()
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ImageFormatError("malformed PNM header")
    return tokens, pos + 1


def decode_pnm(buf: bytes) -> np.ndarray:
    tokens, offset = _read_header_tokens(buf, 4)
    magic = tokens[0]
    if magic not in _PNM_MAGIC:
        raise ImageFormatError(f"unsupported PNM magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageFormatError("non-integer PNM header field") from exc
    if maxval != 255:
        raise ImageFormatError(f"only maxval 255 is supported, got {maxval}")
    channels = _PNM_MAGIC[magic]
    size = width * height * channels
    raster = np.frombuffer(buf, dtype=np.uint8, count=-1, offset=offset)
    if raster.size < size:
        raise ImageFormatError("truncated PNM raster")
    raster = raster[:size]
    if channels == 1:
        return raster.reshape(height, width).copy()
    return raster.reshape(height, width, 3).copy()


def encode_pnm(img: np.ndarray) -> bytes:
    img = to_uint8(img)
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ImageFormatError(f"cannot encode array of shape {img.shape} as PNM")
    header = b"%s\n%d %d\n255\n" % (magic, img.shape[1], img.shape[0])
    return header + np.ascontiguousarray(img).tobytes()


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize real intensities to 8 bits (round half to even, clip to [0, 255])."""
    if img.dtype == np.uint8:
        return img
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def read_image(path) -> np.ndarray:
    """Read an image as float64: (H, W) for gray, (H, W, 3) for color."""
    path = os.fspath(path)
    if path.lower().endswith((".pgm", ".ppm", ".pnm")):
        with open(path, "rb") as fh:
            arr = decode_pnm(fh.read())
    else:
        from PIL import Image as PILImage

        with PILImage.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB" if "A" in im.mode or im.mode in ("P", "CMYK") else "L")
            arr = np.asarray(im)
    return arr.astype(np.float64)


def write_image(path, img: np.ndarray) -> None:
    path = os.fspath(path)
    if path.lower().endswith((".pgm", ".ppm", ".pnm")):
        with open(path, "wb") as fh:
            fh.write(encode_pnm(img))
        return
    from PIL import Image as PILImage

    PILImage.fromarray(to_uint8(img)).save(path)
