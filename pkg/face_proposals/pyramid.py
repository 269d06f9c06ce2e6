"""Image pyramid construction and workload accounting"""

# Standard
import logging
import math
from dataclasses import dataclass

# Installed
import numpy as np

# Own
from face_proposals.image_io import Image
from face_proposals.network import WINDOW
from face_proposals.tensor import ACCUMULATE_DTYPE, STORAGE_DTYPE

log = logging.getLogger(__name__)

DEDUP_TOLERANCE = 1e-6


class PyramidError(ValueError):
    pass


@dataclass(frozen=True)
class PyramidConfig(object):
    """scale_factor is the ratio between consecutive levels, base scale is WINDOW / min_face"""

    scale_factor: float = 0.79
    min_face: float = 12.0
    extra_layer: bool = False

    def __post_init__(self):
        if not 0 < self.scale_factor < 1:
            raise PyramidError(f"Scale factor must lie in (0, 1), got {self.scale_factor}")
        if self.min_face < 1:
            raise PyramidError(f"Minimum face size must be at least 1 pixel, got {self.min_face}")

    @property
    def base_scale(self):
        return WINDOW / self.min_face


@dataclass(frozen=True)
class LevelGeometry(object):
    scale: float
    height: int
    width: int

    @property
    def cells(self):
        return self.height * self.width


@dataclass(frozen=True, eq=False)
class PyramidLevel(object):
    scale: float
    image: Image

    @property
    def height(self):
        return self.image.height

    @property
    def width(self):
        return self.image.width

    @property
    def geometry(self):
        return LevelGeometry(self.scale, self.height, self.width)


def round_half_up(value):
    return int(math.floor(value + 0.5))


def level_size(height, width, scale):
    return round_half_up(height * scale), round_half_up(width * scale)


def plan_levels(height, width, cfg: PyramidConfig):
    """Level scales and sizes for an image, largest first, without resampling"""
    base = cfg.base_scale
    if min(level_size(height, width, base)) < WINDOW:
        raise PyramidError(
            f"Image {width}x{height} is smaller than {WINDOW}x{WINDOW} at the base scale {base:.4g} "
            f"(minimum face {cfg.min_face})"
        )

    scales = []
    scale = base
    while min(level_size(height, width, scale)) >= WINDOW:
        scales.append(scale)
        scale *= cfg.scale_factor

    if cfg.extra_layer:
        extra = 0.5 * base
        if min(level_size(height, width, extra)) >= WINDOW and all(
            abs(extra - s) >= DEDUP_TOLERANCE for s in scales
        ):
            scales.append(extra)
        scales.sort(reverse=True)

    return [LevelGeometry(s, *level_size(height, width, s)) for s in scales]


def resize_bilinear(image: Image, new_h: int, new_w: int) -> Image:
    """Bilinear resampling with half-pixel centres: src = (dst + 0.5) / scale - 0.5"""
    if new_h < 1 or new_w < 1:
        raise PyramidError(f"Target size must be at least 1x1, got {new_w}x{new_h}")
    if (new_h, new_w) == (image.height, image.width):
        return image

    def taps(src_size, dst_size):
        pos = (np.arange(dst_size, dtype=ACCUMULATE_DTYPE) + 0.5) * (src_size / dst_size) - 0.5
        pos = np.clip(pos, 0, src_size - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, src_size - 1)
        return lo, hi, pos - lo

    y0, y1, wy = taps(image.height, new_h)
    x0, x1, wx = taps(image.width, new_w)
    src = image.data.astype(ACCUMULATE_DTYPE)
    wy = wy[:, np.newaxis, np.newaxis]
    wx = wx[np.newaxis, :, np.newaxis]

    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bottom = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    return Image((top * (1 - wy) + bottom * wy).astype(STORAGE_DTYPE))


def build_pyramid(image: Image, cfg: PyramidConfig):
    """Resized copies of the image, one per planned level, largest scale first"""
    levels = []
    for geometry in plan_levels(image.height, image.width, cfg):
        resized = resize_bilinear(image, geometry.height, geometry.width)
        levels.append(PyramidLevel(geometry.scale, resized))
    log.debug(f"Pyramid scales {[round(level.scale, 6) for level in levels]} for {image.width}x{image.height} image")
    return levels


def pyramid_workload(levels):
    """Total cells over all levels; accepts PyramidLevel or LevelGeometry entries"""
    return sum(level.height * level.width for level in levels)
