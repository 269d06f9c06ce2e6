import dataclasses
import os

import numpy as np
import pytest

from face_proposals import image_io, network, pyramid
from face_proposals.proposals import BBox


def random_pixels(seed, height, width, channels=3):
    rng = np.random.default_rng(seed)
    shape = (height, width) if channels == 1 else (height, width, channels)
    return rng.integers(0, 256, size=shape, dtype=np.uint8)


@pytest.fixture
def get_env_file_path():
    """returns the test env file path"""
    return os.path.join(os.path.dirname(__file__), ".test.env")


@pytest.fixture
def weights():
    return network.random_weights(0)


@pytest.fixture
def uniform_weights():
    """All convolutions zero, every location predicts 1/C for each class"""
    return network.random_weights(0, spread=0.0)


@pytest.fixture
def weights_file(tmp_path, weights):
    path = os.path.join(tmp_path, "weights.fpnw")
    network.save_weights(weights, path)
    return path


@pytest.fixture
def uniform_weights_file(tmp_path, uniform_weights):
    path = os.path.join(tmp_path, "uniform.fpnw")
    network.save_weights(uniform_weights, path)
    return path


@pytest.fixture
def ppm_file(tmp_path):
    """Factory writing binary PPM (3 channels) or PGM (1 channel) files"""

    def _method(name="image.ppm", height=24, width=32, channels=3, seed=0):
        path = os.path.join(tmp_path, name)
        image_io.save_image(random_pixels(seed, height, width, channels), path)
        return path

    return _method


@pytest.fixture
def sparse_levels():
    """Level geometry of a 320x240 scene, minimum face 12, scale factor 0.25 with the extra layer"""
    cfg = pyramid.PyramidConfig(scale_factor=0.25, min_face=12, extra_layer=True)
    return pyramid.plan_levels(240, 320, cfg)


@pytest.fixture
def annotations_file(tmp_path):
    def _method(annotations, name="annotations.txt"):
        path = os.path.join(tmp_path, name)
        with open(path, "w") as fh:
            for image_path, boxes in annotations.items():
                fh.write(f"{image_path} {len(boxes)}\n")
                for box in boxes:
                    fh.write(" ".join(str(value) for value in box) + "\n")
        return path

    return _method


@pytest.fixture
def two_faces():
    return [BBox(10, 10, 50, 50, score=1.0), BBox(100, 40, 160, 100, score=1.0)]


@pytest.fixture
def biased_weights():
    """Factory for weights whose every cell predicts one class with probability close to 1"""

    def _method(class_id, num_classes=network.DEFAULT_NUM_CLASSES, bias=20.0):
        base = network.random_weights(0, num_classes=num_classes, spread=0.0)
        layers = []
        for layer in base.layers:
            if layer.spec.name == "conv5":
                bias_values = np.zeros(num_classes, dtype=np.float32)
                bias_values[class_id] = bias
                layer = dataclasses.replace(layer, bias=bias_values)
            layers.append(layer)
        return network.NetworkWeights(tuple(layers), num_classes)

    return _method
