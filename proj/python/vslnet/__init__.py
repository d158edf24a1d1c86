"""Span-based moment localization in videos (C++ core)."""

import json as _json

from . import _vslnet
from ._vslnet import (
    ConfigError,
    ContractError,
    DataError,
    Dataset,
    NumericalError,
    ShapeError,
    VslnetError,
    highlight_labels,
    iou,
    locate_span,
    nil_labels,
    run_cli,
    span_to_time,
    time_to_span,
)

__all__ = [
    "ConfigError", "ContractError", "DataError", "Dataset", "Model", "NumericalError",
    "ShapeError", "VslnetError", "evaluate", "generate_synthetic", "highlight_labels", "iou",
    "locate_span", "nil_labels", "run_cli", "span_to_time", "time_to_span", "train",
]


class Model:
    """Wraps the native model; configs are plain dicts."""

    def __init__(self, config=None, _native=None):
        self._m = _native if _native is not None else _vslnet.Model(_json.dumps(config or {}))

    @classmethod
    def load(cls, checkpoint, config):
        return cls(_native=_vslnet.Model.load(str(checkpoint), _json.dumps(config)))

    @property
    def config(self):
        return _json.loads(self._m.config_json)

    @property
    def num_parameters(self):
        return self._m.num_parameters

    def forward(self, dataset, sample_id):
        return self._m.forward(dataset, sample_id)

    def predict(self, dataset, split="test", strategy="pm"):
        return self._m.predict(dataset, split, strategy)


def generate_synthetic(out_dir, **config):
    return _vslnet.generate_synthetic(str(out_dir), _json.dumps(config))


def train(dataset, model=None, train=None, output_dir=""):
    native, summary = _vslnet.train(
        dataset, _json.dumps(model or {}), _json.dumps(train or {}), str(output_dir))
    return Model(_native=native), _json.loads(summary)


def evaluate(predictions, dataset, split="test"):
    return _json.loads(_vslnet.evaluate(list(predictions), dataset, split))
