"""Dense tensor operations needed to run the proposal network"""

# Standard
import math
from dataclasses import dataclass

# Installed
import numpy as np

STORAGE_DTYPE = np.float32
ACCUMULATE_DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operands do not have compatible shapes"""


@dataclass(frozen=True)
class Tensor3(object):
    """Feature map of shape (height, width, channels), row-major, single precision"""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=STORAGE_DTYPE)
        if data.ndim != 3:
            raise ShapeError(f"Tensor3 needs a 3-D array, got shape {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, height, width, channels):
        return cls(np.zeros((height, width, channels), dtype=STORAGE_DTYPE))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape


def conv2d(input: Tensor3, kernels: np.ndarray, bias: np.ndarray, pad: int = 0, stride: int = 1) -> Tensor3:
    """Cross-correlation with zero padding.

    kernels has shape (out, in, kh, kw), bias has shape (out,).
    """
    kernels = np.asarray(kernels)
    bias = np.asarray(bias)
    if kernels.ndim != 4:
        raise ShapeError(f"Kernels must be 4-D (out, in, kh, kw), got shape {kernels.shape}")
    out_ch, in_ch, kh, kw = kernels.shape
    if input.channels != in_ch:
        raise ShapeError(f"Input has {input.channels} channel(s) but kernels expect {in_ch}")
    if bias.shape != (out_ch,):
        raise ShapeError(f"Bias shape {bias.shape} does not match {out_ch} output channel(s)")
    if pad < 0:
        raise ShapeError(f"Padding must be non-negative, got {pad}")
    if stride < 1:
        raise ShapeError(f"Stride must be at least 1, got {stride}")

    padded_h = input.height + 2 * pad
    padded_w = input.width + 2 * pad
    out_h = (padded_h - kh) // stride + 1
    out_w = (padded_w - kw) // stride + 1
    if padded_h < kh or padded_w < kw or out_h < 1 or out_w < 1:
        raise ShapeError(
            f"Empty output: input {input.height}x{input.width} with pad {pad} is smaller than kernel {kh}x{kw}"
        )

    x = input.data.astype(ACCUMULATE_DTYPE)
    if pad:
        x = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    w = kernels.astype(ACCUMULATE_DTYPE)

    acc = np.zeros((out_h, out_w, out_ch), dtype=ACCUMULATE_DTYPE)
    row_end = (out_h - 1) * stride + 1
    col_end = (out_w - 1) * stride + 1
    for i in range(kh):
        for j in range(kw):
            window = x[i : i + row_end : stride, j : j + col_end : stride, :]
            # (out_h, out_w, in) x (in, out)
            acc += window @ w[:, :, i, j].T
    acc += bias.astype(ACCUMULATE_DTYPE)
    return Tensor3(acc.astype(STORAGE_DTYPE))


def pooled_size(size, k, stride):
    """Ceil-mode output size, the last window always starts inside the input"""
    out = max(math.ceil((size - k) / stride), 0) + 1
    if (out - 1) * stride >= size:
        out -= 1
    return out


def maxpool(input: Tensor3, k: int, stride: int) -> Tensor3:
    """Max pooling with ceiling output size; border windows are truncated to the in-bounds cells"""
    if k < 1 or stride < 1:
        raise ShapeError(f"Pool kernel and stride must be at least 1, got k={k}, stride={stride}")
    if input.height < 1 or input.width < 1:
        raise ShapeError(f"Cannot pool an empty input of shape {input.shape}")

    out_h = pooled_size(input.height, k, stride)
    out_w = pooled_size(input.width, k, stride)
    need_h = (out_h - 1) * stride + k
    need_w = (out_w - 1) * stride + k
    x = np.pad(
        input.data,
        ((0, max(need_h - input.height, 0)), (0, max(need_w - input.width, 0)), (0, 0)),
        constant_values=-np.inf,
    )
    out = np.full((out_h, out_w, input.channels), -np.inf, dtype=STORAGE_DTYPE)
    for i in range(k):
        for j in range(k):
            window = x[i : i + (out_h - 1) * stride + 1 : stride, j : j + (out_w - 1) * stride + 1 : stride, :]
            np.maximum(out, window, out=out)
    return Tensor3(out)


def prelu(input: Tensor3, slopes: np.ndarray) -> Tensor3:
    """out = x for x >= 0, slope_c * x otherwise"""
    slopes = np.asarray(slopes, dtype=STORAGE_DTYPE)
    if slopes.shape != (input.channels,):
        raise ShapeError(f"Got {slopes.size} slope(s) for {input.channels} channel(s)")
    x = input.data
    return Tensor3(np.where(x >= 0, x, x * slopes))


def softmax_channels(input: Tensor3) -> Tensor3:
    """Per-location softmax over the channel axis"""
    if input.channels < 2:
        raise ShapeError(f"Softmax needs at least 2 channels, got {input.channels}")
    x = input.data.astype(ACCUMULATE_DTYPE)
    x = x - x.max(axis=2, keepdims=True)
    e = np.exp(x)
    return Tensor3((e / e.sum(axis=2, keepdims=True)).astype(STORAGE_DTYPE))
