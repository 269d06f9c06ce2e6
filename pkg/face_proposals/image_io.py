"""Reading and writing binary PPM/PGM images"""

# Standard
import logging

# Installed
import numpy as np

# Own
from face_proposals.tensor import Tensor3

log = logging.getLogger(__name__)

MAXVAL = 255
_CHANNELS = {b"P5": 1, b"P6": 3}
_WHITESPACE = b" \t\r\n\v\f"


class ImageFormatError(Exception):
    """Base class for undecodable image files"""


class UnsupportedFormatError(ImageFormatError):
    pass


class MaxvalError(ImageFormatError):
    pass


class TruncatedImageError(ImageFormatError):
    pass


class Image(Tensor3):
    """Normalized image, values (v - 127.5) / 127.5 for 8-bit input"""

    def __post_init__(self):
        super().__post_init__()
        if self.channels not in (1, 3):
            raise ImageFormatError(f"Images have 1 or 3 channels, got {self.channels}")

    @classmethod
    def from_uint8(cls, pixels):
        """Build a normalized image from raw 8-bit values, replicating grayscale to 3 channels"""
        pixels = np.asarray(pixels)
        if pixels.ndim == 2:
            pixels = pixels[:, :, np.newaxis]
        if pixels.shape[2] == 1:
            pixels = np.repeat(pixels, 3, axis=2)
        return cls(normalize(pixels))

    def to_uint8(self):
        return np.clip(np.rint(self.data * 127.5 + 127.5), 0, MAXVAL).astype(np.uint8)


def normalize(raw):
    return ((np.asarray(raw, dtype=np.float64) - 127.5) / 127.5).astype(np.float32)


def _read_header(payload):
    """Returns (magic, width, height, maxval, offset of pixel data)"""
    magic = payload[:2]
    if magic not in _CHANNELS:
        raise UnsupportedFormatError(f"Unsupported image magic {magic!r}, only binary P5/P6 are read")

    fields = []
    pos = 2
    while len(fields) < 3:
        if pos >= len(payload):
            raise TruncatedImageError("Image header ends before width, height and maxval")
        byte = payload[pos : pos + 1]
        if byte == b"#":
            end = payload.find(b"\n", pos)
            pos = len(payload) if end < 0 else end + 1
        elif byte in _WHITESPACE:
            pos += 1
        else:
            start = pos
            while pos < len(payload) and payload[pos : pos + 1] not in _WHITESPACE + b"#":
                pos += 1
            token = payload[start:pos]
            if not token.isdigit():
                raise UnsupportedFormatError(f"Malformed image header field {token!r}")
            fields.append(int(token))

    if pos >= len(payload):
        raise TruncatedImageError("Image header is not followed by pixel data")
    # Exactly one whitespace byte separates the header from the raster
    pos += 1
    width, height, maxval = fields
    return magic, width, height, maxval, pos


def decode_image(payload: bytes) -> Image:
    magic, width, height, maxval, offset = _read_header(payload)
    if maxval != MAXVAL:
        raise MaxvalError(f"Only maxval {MAXVAL} is supported, got {maxval}")
    if width < 1 or height < 1:
        raise UnsupportedFormatError(f"Image has empty size {width}x{height}")
    channels = _CHANNELS[magic]
    needed = width * height * channels
    raster = payload[offset : offset + needed]
    if len(raster) < needed:
        raise TruncatedImageError(f"Expected {needed} bytes of pixel data, found {len(raster)}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return Image.from_uint8(pixels)


def load_image(path) -> Image:
    with open(path, mode="rb") as fh:
        payload = fh.read()
    image = decode_image(payload)
    log.debug(f"Read {image.width}x{image.height} image from {path}")
    return image


def encode_image(pixels) -> bytes:
    """P5 for (h, w) or (h, w, 1) arrays, P6 for (h, w, 3)"""
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim == 3 and pixels.shape[2] == 1:
        pixels = pixels[:, :, 0]
    if pixels.ndim == 2:
        magic = b"P5"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    else:
        raise ImageFormatError(f"Cannot encode pixel array of shape {pixels.shape}")
    height, width = pixels.shape[:2]
    header = magic + f"\n{width} {height}\n{MAXVAL}\n".encode("ascii")
    return header + pixels.tobytes()


def save_image(pixels, path):
    with open(path, mode="wb") as fh:
        fh.write(encode_image(pixels))
