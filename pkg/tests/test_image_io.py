import numpy as np
import pytest

from face_proposals import image_io


def test_white_and_black_ppm():
    header = b"P6\n2 2\n255\n"
    white = image_io.decode_image(header + b"\xff" * 12)
    assert white.shape == (2, 2, 3)
    assert np.all(white.data == 1.0)

    black = image_io.decode_image(header + b"\x00" * 12)
    np.testing.assert_allclose(black.data, -1.0)


def test_pgm_replicated_to_three_channels():
    image = image_io.decode_image(b"P5 3 1 255\n" + bytes([0, 128, 255]))
    assert image.shape == (1, 3, 3)
    for channel in range(3):
        np.testing.assert_allclose(image.data[0, :, channel], [-1.0, 0.5 / 127.5, 1.0], rtol=1e-6)


def test_header_comments_and_whitespace():
    payload = b"P6\n# written by hand\n 1\t1 # size\n255\n" + bytes([10, 20, 30])
    image = image_io.decode_image(payload)
    assert np.array_equal(image.data[0, 0], image_io.normalize([10, 20, 30]))


def test_raster_starting_with_whitespace_byte():
    # 0x0a is both a pixel value and a header separator
    image = image_io.decode_image(b"P5\n1 1\n255\n\n")
    assert image.data[0, 0, 0] == pytest.approx((10 - 127.5) / 127.5)


def test_unsupported_magic():
    with pytest.raises(image_io.UnsupportedFormatError):
        image_io.decode_image(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(image_io.UnsupportedFormatError):
        image_io.decode_image(b"\x89PNG\r\n")


def test_maxval():
    with pytest.raises(image_io.MaxvalError):
        image_io.decode_image(b"P5\n1 1\n65535\n\x00\x00")


def test_truncated():
    with pytest.raises(image_io.TruncatedImageError):
        image_io.decode_image(b"P6\n2 2\n255\n" + b"\x00" * 11)
    with pytest.raises(image_io.TruncatedImageError):
        image_io.decode_image(b"P6\n2 2")


def test_errors_share_a_base():
    for error in (image_io.UnsupportedFormatError, image_io.MaxvalError, image_io.TruncatedImageError):
        assert issubclass(error, image_io.ImageFormatError)


def test_save_and_load(ppm_file):
    path = ppm_file("gray.pgm", height=5, width=4, channels=1, seed=3)
    image = image_io.load_image(path)
    assert image.shape == (5, 4, 3)
    assert np.array_equal(image.to_uint8()[:, :, 0], image.to_uint8()[:, :, 2])

    path = ppm_file("color.ppm", height=3, width=6, seed=4)
    with open(path, "rb") as fh:
        assert fh.read(2) == b"P6"
    assert image_io.load_image(path).shape == (3, 6, 3)


def test_from_uint8_round_trip():
    pixels = np.random.default_rng(5).integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
    assert np.array_equal(image_io.Image.from_uint8(pixels).to_uint8(), pixels)


def test_encode_rejects_bad_shape():
    with pytest.raises(image_io.ImageFormatError):
        image_io.encode_image(np.zeros((2, 2, 2), dtype=np.uint8))
