"""The multi-label proposal network: layer table, weight file, patch and fully-convolutional forward passes"""

# Standard
import enum
import logging
import os
import struct
from dataclasses import dataclass
from typing import Optional, Tuple

# Installed
import numpy as np

# Own
from face_proposals import tensor
from face_proposals.tensor import Tensor3

log = logging.getLogger(__name__)

BACKGROUND_CLASS = 0
FACE_CLASS = 1
DEFAULT_CLASS_NAMES = ("background", "face", "eye", "nose", "mouth")
DEFAULT_NUM_CLASSES = len(DEFAULT_CLASS_NAMES)

WINDOW = 12
STRIDE = 2
# Receptive field of one heatmap cell in 1-padded input coordinates
CONTEXT = 15

MAGIC = b"FPNW"
FORMAT_VERSION = 1


class WeightFileError(Exception):
    """Base class for problems with a weight file"""


class BadMagicError(WeightFileError):
    pass


class VersionMismatchError(WeightFileError):
    pass


class WeightShapeError(WeightFileError):
    pass


class TruncatedWeightFileError(WeightFileError):
    pass


class InputSizeError(ValueError):
    """Raised when an input is too small or has the wrong shape for the network"""


class LayerKind(enum.IntEnum):
    CONV = 0
    POOL = 1
    PRELU = 2
    SOFTMAX = 3


def class_names(num_classes):
    """Names for each output class, the first five are fixed"""
    names = list(DEFAULT_CLASS_NAMES[:num_classes])
    names += [f"class{k}" for k in range(len(names), num_classes)]
    return tuple(names)


@dataclass(frozen=True)
class LayerSpec(object):
    name: str
    kind: LayerKind
    kernel: int = 0
    stride: int = 0
    pad: int = 0
    in_channels: int = 0
    out_channels: int = 0


def canonical_layer_specs(num_classes=DEFAULT_NUM_CLASSES):
    """Conv1 .. Conv5 with PReLU activations and a channel softmax"""
    C = LayerKind
    return (
        LayerSpec("conv1", C.CONV, kernel=3, stride=1, pad=1, in_channels=3, out_channels=16),
        LayerSpec("prelu1", C.PRELU, in_channels=16, out_channels=16),
        LayerSpec("pool1", C.POOL, kernel=3, stride=2, in_channels=16, out_channels=16),
        LayerSpec("conv2", C.CONV, kernel=3, stride=1, in_channels=16, out_channels=32),
        LayerSpec("prelu2", C.PRELU, in_channels=32, out_channels=32),
        LayerSpec("conv3", C.CONV, kernel=3, stride=1, in_channels=32, out_channels=32),
        LayerSpec("prelu3", C.PRELU, in_channels=32, out_channels=32),
        LayerSpec("conv4", C.CONV, kernel=2, stride=1, in_channels=32, out_channels=64),
        LayerSpec("prelu4", C.PRELU, in_channels=64, out_channels=64),
        LayerSpec("conv5", C.CONV, kernel=1, stride=1, in_channels=64, out_channels=num_classes),
        LayerSpec("prob", C.SOFTMAX, in_channels=num_classes, out_channels=num_classes),
    )


def composite_stride(specs):
    stride = 1
    for spec in specs:
        if spec.kind in (LayerKind.CONV, LayerKind.POOL):
            stride *= spec.stride
    return stride


@dataclass(frozen=True, eq=False)
class Layer(object):
    spec: LayerSpec
    kernels: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    slopes: Optional[np.ndarray] = None

    def __post_init__(self):
        spec = self.spec
        if spec.kind == LayerKind.CONV:
            expected = {
                "kernels": (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel),
                "bias": (spec.out_channels,),
            }
        elif spec.kind == LayerKind.PRELU:
            expected = {"slopes": (spec.out_channels,)}
        else:
            expected = {}

        for attr in ("kernels", "bias", "slopes"):
            value = getattr(self, attr)
            if attr not in expected:
                if value is not None:
                    raise WeightShapeError(f"Layer {spec.name} ({spec.kind.name.lower()}) carries no {attr}")
                continue
            if value is None:
                raise WeightShapeError(f"Layer {spec.name} is missing {attr}")
            value = np.array(value, dtype=np.float32)
            if value.shape != expected[attr]:
                raise WeightShapeError(
                    f"Layer {spec.name}: {attr} has shape {value.shape}, expected {expected[attr]}"
                )
            value.setflags(write=False)
            object.__setattr__(self, attr, value)

    @property
    def parameter_count(self):
        return sum(a.size for a in (self.kernels, self.bias, self.slopes) if a is not None)


@dataclass(frozen=True, eq=False)
class NetworkWeights(object):
    """Immutable parameter set for the canonical network"""

    layers: Tuple[Layer, ...]
    num_classes: int = DEFAULT_NUM_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.num_classes < 2:
            raise WeightShapeError(f"The network needs at least 2 classes, got {self.num_classes}")
        expected = canonical_layer_specs(self.num_classes)
        actual = tuple(layer.spec for layer in self.layers)
        if actual != expected:
            for position, (want, got) in enumerate(zip(expected, actual)):
                if want != got:
                    raise WeightShapeError(f"Layer {position} is {got}, expected {want}")
            raise WeightShapeError(f"Expected {len(expected)} layers, got {len(actual)}")

    @property
    def class_names(self):
        return class_names(self.num_classes)

    @property
    def parameter_count(self):
        return sum(layer.parameter_count for layer in self.layers)


@dataclass(frozen=True, eq=False)
class HeatmapSet(object):
    """Per-class probability grids of one pyramid level.

    maps has shape (classes, rows, cols). Cell (r, c) covers the level window with
    top-left (STRIDE * c, STRIDE * r) and side WINDOW.
    """

    maps: np.ndarray
    level_scale: float
    stride: int = STRIDE
    window: int = WINDOW
    level_size: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        maps = np.array(self.maps, dtype=np.float32)
        if maps.ndim != 3:
            raise InputSizeError(f"Heatmaps need shape (classes, rows, cols), got {maps.shape}")
        maps.setflags(write=False)
        object.__setattr__(self, "maps", maps)

    @property
    def num_classes(self):
        return self.maps.shape[0]

    @property
    def rows(self):
        return self.maps.shape[1]

    @property
    def cols(self):
        return self.maps.shape[2]

    def class_map(self, class_id):
        return self.maps[class_id]


def heatmap_shape(height, width):
    """Grid size produced by forward_fcn for a height x width input"""
    if height < WINDOW or width < WINDOW:
        raise InputSizeError(f"Input {height}x{width} is smaller than the {WINDOW}x{WINDOW} window")

    def along(size):
        size = tensor.pooled_size(size, 3, 2)  # conv1 keeps the size, pool1
        return size - 2 - 2 - 1  # conv2, conv3, conv4

    return along(height), along(width)


def _run(weights, x, conv1_pad):
    for layer in weights.layers:
        spec = layer.spec
        if spec.kind == LayerKind.CONV:
            pad = conv1_pad if spec.name == "conv1" else spec.pad
            x = tensor.conv2d(x, layer.kernels, layer.bias, pad=pad, stride=spec.stride)
        elif spec.kind == LayerKind.PRELU:
            x = tensor.prelu(x, layer.slopes)
        elif spec.kind == LayerKind.POOL:
            x = tensor.maxpool(x, spec.kernel, spec.stride)
        elif spec.kind == LayerKind.SOFTMAX:
            x = tensor.softmax_channels(x)
    return x


def forward_patch(weights: NetworkWeights, patch: Tensor3) -> np.ndarray:
    """Class probabilities for a single normalized 12x12x3 patch"""
    if patch.shape != (WINDOW, WINDOW, 3):
        raise InputSizeError(f"Patch must be {WINDOW}x{WINDOW}x3, got {patch.shape}")
    return _run(weights, patch, conv1_pad=1).data[0, 0].copy()


def forward_context(weights: NetworkWeights, crop: Tensor3) -> np.ndarray:
    """Class probabilities for a crop of the 1-padded image, conv1 run without padding.

    A 14x14 crop is the zero-padded embedding of a 12x12 patch; a 15x15 crop is the
    full receptive field of one heatmap cell.
    """
    if crop.height not in (WINDOW + 2, CONTEXT) or crop.width not in (WINDOW + 2, CONTEXT):
        raise InputSizeError(f"Context crop must be 14 or 15 cells wide, got {crop.height}x{crop.width}")
    return _run(weights, crop, conv1_pad=0).data[0, 0].copy()


def forward_fcn(weights: NetworkWeights, image: Tensor3, level_scale: float = 1.0) -> HeatmapSet:
    """Run the network over a whole image, equivalent to a stride-2 sliding window"""
    if image.height < WINDOW or image.width < WINDOW:
        raise InputSizeError(f"Image {image.height}x{image.width} is smaller than the {WINDOW}x{WINDOW} window")
    probs = _run(weights, image, conv1_pad=1)
    log.debug(f"Heatmaps {probs.height}x{probs.width} for level {image.height}x{image.width} at scale {level_scale}")
    return HeatmapSet(
        maps=np.transpose(probs.data, (2, 0, 1)),
        level_scale=level_scale,
        level_size=(image.height, image.width),
    )


def random_weights(seed, num_classes=DEFAULT_NUM_CLASSES, spread=0.5):
    """Deterministic random parameters, mostly for tests and benchmarks"""
    rng = np.random.default_rng(seed)
    layers = []
    for spec in canonical_layer_specs(num_classes):
        if spec.kind == LayerKind.CONV:
            shape = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
            layers.append(
                Layer(
                    spec,
                    kernels=rng.uniform(-spread, spread, size=shape).astype(np.float32),
                    bias=rng.uniform(-spread, spread, size=spec.out_channels).astype(np.float32),
                )
            )
        elif spec.kind == LayerKind.PRELU:
            slopes = rng.uniform(0.05, 0.95, size=spec.out_channels).astype(np.float32)
            layers.append(Layer(spec, slopes=slopes))
        else:
            layers.append(Layer(spec))
    return NetworkWeights(tuple(layers), num_classes)


### WEIGHT FILE ###
_HEADER = struct.Struct("<4sIII")
_U32 = struct.Struct("<I")
_LAYER = struct.Struct("<BIIIII")


def dump_weights(weights: NetworkWeights) -> bytes:
    chunks = [_HEADER.pack(MAGIC, FORMAT_VERSION, weights.num_classes, len(weights.layers))]
    for layer in weights.layers:
        spec = layer.spec
        name = spec.name.encode("utf-8")
        chunks.append(_U32.pack(len(name)))
        chunks.append(name)
        chunks.append(
            _LAYER.pack(int(spec.kind), spec.kernel, spec.stride, spec.pad, spec.in_channels, spec.out_channels)
        )
        for values in (layer.kernels, layer.bias, layer.slopes):
            if values is not None:
                chunks.append(values.astype("<f4").tobytes())
    return b"".join(chunks)


def save_weights(weights: NetworkWeights, path):
    payload = dump_weights(weights)
    with open(path, mode="wb") as fh:
        fh.write(payload)
    log.debug(f"Wrote {len(payload)} bytes of weights to {path}")


class _Reader(object):
    def __init__(self, payload):
        self.payload = payload
        self.offset = 0

    def take(self, n, what):
        if self.offset + n > len(self.payload):
            raise TruncatedWeightFileError(
                f"Weight file ends at byte {len(self.payload)} while reading {what} "
                f"(needed {n} more from {self.offset})"
            )
        chunk = self.payload[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt, what):
        return fmt.unpack(self.take(fmt.size, what))

    def floats(self, count, what):
        return np.frombuffer(self.take(4 * count, what), dtype="<f4").astype(np.float32)


def parse_weights(payload: bytes) -> NetworkWeights:
    reader = _Reader(payload)
    magic, version, num_classes, layer_count = reader.unpack(_HEADER, "header")
    if magic != MAGIC:
        raise BadMagicError(f"Not a weight file, magic is {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"Weight file version {version} is not supported, expected {FORMAT_VERSION}")
    expected = canonical_layer_specs(num_classes)
    if layer_count != len(expected):
        raise WeightShapeError(f"Weight file has {layer_count} layers, expected {len(expected)}")

    layers = []
    for position in range(layer_count):
        (name_len,) = reader.unpack(_U32, f"name length of layer {position}")
        try:
            name = reader.take(name_len, f"name of layer {position}").decode("utf-8")
        except UnicodeDecodeError as e:
            raise WeightFileError(f"Layer {position} name is not valid UTF-8: {e}")
        kind, kernel, stride, pad, in_ch, out_ch = reader.unpack(_LAYER, f"layer {name}")
        try:
            kind = LayerKind(kind)
        except ValueError:
            raise WeightShapeError(f"Layer {name} has unknown kind {kind}")
        spec = LayerSpec(name, kind, kernel, stride, pad, in_ch, out_ch)
        if spec != expected[position]:
            raise WeightShapeError(f"Layer {position} is {spec}, expected {expected[position]}")

        if kind == LayerKind.CONV:
            kernels = reader.floats(out_ch * in_ch * kernel * kernel, f"kernels of {name}")
            bias = reader.floats(out_ch, f"biases of {name}")
            layers.append(Layer(spec, kernels=kernels.reshape(out_ch, in_ch, kernel, kernel), bias=bias))
        elif kind == LayerKind.PRELU:
            layers.append(Layer(spec, slopes=reader.floats(out_ch, f"slopes of {name}")))
        else:
            layers.append(Layer(spec))

    if reader.offset != len(payload):
        raise WeightFileError(f"Weight file has {len(payload) - reader.offset} trailing byte(s)")
    return NetworkWeights(tuple(layers), num_classes)


def load_weights(path) -> NetworkWeights:
    with open(path, mode="rb") as fh:
        payload = fh.read()
    weights = parse_weights(payload)
    log.info(
        f"Loaded {weights.parameter_count} parameters ({os.path.getsize(path)} bytes, "
        f"{weights.num_classes} classes) from {path}"
    )
    return weights
