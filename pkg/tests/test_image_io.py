import numpy as np
import pytest

from deepkriging.image_io import ImageFormatError, decode_pnm, encode_pnm, read_image, to_uint8, write_image


def test_pgm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (5, 7)).astype(float)
    write_image(tmp_path / "a.pgm", img)
    assert np.array_equal(read_image(tmp_path / "a.pgm"), img)


def test_ppm_round_trip(rng):
    img = rng.integers(0, 256, (4, 3, 3)).astype(float)
    assert np.array_equal(decode_pnm(encode_pnm(img)), img)


def test_png_via_pillow(tmp_path, rng):
    img = rng.integers(0, 256, (6, 6, 3)).astype(float)
    write_image(tmp_path / "a.png", img)
    assert np.array_equal(read_image(tmp_path / "a.png"), img)


def test_rounding_and_clipping():
    assert to_uint8(np.array([-3.0, 1.5, 2.4, 300.0])).tolist() == [0, 2, 2, 255]


def test_header_comments():
    buf = b"P5\n# comment\n2 1\n255\n" + bytes([7, 9])
    assert decode_pnm(buf).tolist() == [[7.0, 9.0]]


@pytest.mark.parametrize("buf", [b"P3\n1 1\n255\n0", b"P5\n2 2\n255\n\x00", b"P5\n1 1\n65535\n\x00\x00"])
def test_malformed(buf):
    with pytest.raises(ImageFormatError):
        decode_pnm(buf)
