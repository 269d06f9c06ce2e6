import os
from dataclasses import dataclass
from typing import Optional

import dotenv
import yaml

from face_proposals.proposals import ProposalConfig
from face_proposals.pyramid import PyramidConfig


class ConfigError(ValueError):
    pass


def _bool(value):
    if not isinstance(value, bool):
        raise TypeError(f"expected true or false, got {value!r}")
    return value


def _float(value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeError(f"expected a number, got {value!r}")
    return float(value)


def _int(value):
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, bool) or not isinstance(value, int):
        raise TypeError(f"expected an integer, got {value!r}")
    return value


def _path(value):
    if not isinstance(value, str):
        raise TypeError(f"expected a path, got {value!r}")
    return value


# Keys accepted in a run configuration file, identical to the command line flags
RUN_KEYS = {
    "scale_factor": _float,
    "min_face": _float,
    "extra_layer": _bool,
    "tau_face": _float,
    "tau_part": _float,
    "tau_iou": _float,
    "peak_radius": _int,
    "face_nms_iou": _float,
    "cross_scale_nms_iou": _float,
    "max_proposals": _int,
    "use_parts": _bool,
    "weights": _path,
    "templates": _path,
    "output": _path,
    "annotations": _path,
    "seed": _int,
    "scenes": _int,
    "noise": _float,
    "iou_thresh": _float,
}

PYRAMID_KEYS = ("scale_factor", "min_face", "extra_layer")
PROPOSAL_KEYS = (
    "tau_face",
    "tau_part",
    "tau_iou",
    "peak_radius",
    "face_nms_iou",
    "cross_scale_nms_iou",
    "max_proposals",
    "use_parts",
)


class Config(object):
    def __init__(self, env_file_path=None):
        dotenv.load_dotenv(dotenv_path=env_file_path)
        self.WEIGHTS = os.getenv("FACE_PROPOSALS_WEIGHTS")
        self.TEMPLATES = os.getenv("FACE_PROPOSALS_TEMPLATES")
        self.OUTPUT = os.getenv("FACE_PROPOSALS_OUTPUT")
        self.LOG_LOCATION = os.getenv("FACE_PROPOSALS_LOG_LOCATION")
        try:
            self.WORKERS = int(os.getenv("FACE_PROPOSALS_WORKERS") or 1)
        except ValueError:
            raise ConfigError(f"FACE_PROPOSALS_WORKERS must be an integer, got {os.getenv('FACE_PROPOSALS_WORKERS')}")

    def environment_settings(self):
        settings = {"weights": self.WEIGHTS, "templates": self.TEMPLATES, "output": self.OUTPUT}
        return {key: value for key, value in settings.items() if value}


def read_config_file(path):
    """Settings from a YAML run configuration, unknown keys are rejected"""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            values = yaml.safe_load(fh)
    except yaml.YAMLError as e:
        raise ConfigError(f"Could not parse config file {path}: {e}")
    if values is None:
        return {}
    if not isinstance(values, dict):
        raise ConfigError(f"Config file {path} must hold a mapping of settings")

    unknown = sorted(set(values) - set(RUN_KEYS))
    if unknown:
        raise ConfigError(f"Unknown key(s) in config file {path}: {', '.join(map(str, unknown))}")
    return {key: coerce(key, value) for key, value in values.items()}


def coerce(key, value):
    try:
        return RUN_KEYS[key](value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid value for {key}: {e}")


def merge_settings(config_values, config_path=None, **flags):
    """Defaults < environment < config file < flags; flags left at None do not override"""
    settings = dict(config_values.environment_settings())
    if config_path:
        settings.update(read_config_file(config_path))
    settings.update({key: value for key, value in flags.items() if value is not None})
    return settings


@dataclass(frozen=True)
class RunConfig(object):
    pyramid: PyramidConfig
    proposal: ProposalConfig
    weights_path: Optional[str] = None
    templates_path: Optional[str] = None
    output_path: Optional[str] = None

    @classmethod
    def from_settings(cls, settings, **pyramid_overrides):
        try:
            pyramid_values = {key: settings[key] for key in PYRAMID_KEYS if key in settings}
            pyramid_values.update(pyramid_overrides)
            pyramid = PyramidConfig(**pyramid_values)
            proposal = ProposalConfig(**{key: settings[key] for key in PROPOSAL_KEYS if key in settings})
        except ValueError as e:
            raise ConfigError(str(e))
        return cls(
            pyramid,
            proposal,
            weights_path=settings.get("weights"),
            templates_path=settings.get("templates"),
            output_path=settings.get("output"),
        )
