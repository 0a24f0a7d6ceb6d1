"""Cascaded coarse-to-fine image matcher.

Configurations are plain dicts with the same layout as the CLI's ``run.json``;
missing keys keep their defaults and unknown keys raise ``ValueError``.
"""

import json

import numpy as np

from . import _core
from ._core import ValidationError, auc, grad_check, grad_check_names

__all__ = [
    "ValidationError",
    "auc",
    "bench",
    "default_config",
    "evaluate",
    "generate_corpus",
    "grad_check",
    "grad_check_names",
    "grid_select",
    "match",
    "nms_select",
    "train",
]


def _merge(base, override):
    out = dict(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def default_config():
    return json.loads(_core.default_config())


def _dump(config):
    return json.dumps(_merge(default_config(), config))


def generate_corpus(config):
    return _core.generate_corpus(_dump(config))


def train(config):
    return json.loads(_core.train(_dump(config)))


def evaluate(config, task="homography"):
    return json.loads(_core.evaluate(_dump(config), task))


def match(config, image_a, image_b):
    """Returns an (N, 6) array of xa, ya, xb, yb, conf, scale."""
    return _core.match(_dump(config), np.asarray(image_a, np.float32), np.asarray(image_b, np.float32))


def bench(config, size=256, runs=5):
    return json.loads(_core.bench(_dump(config), size, runs))


def nms_select(values, valid, kernel):
    return _core.nms_select(np.asarray(values, np.float32), np.asarray(valid, np.uint8), kernel).astype(bool)


def grid_select(values, valid, cell):
    return _core.grid_select(np.asarray(values, np.float32), np.asarray(valid, np.uint8), cell).astype(bool)
