"""Checkpoint files: one JSON header line, then the parameters as little-endian float64.

The header records the network config, the layer layout (name, shape,
offset) in storage order, and run metadata such as seed and epoch.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import InvalidArgumentError
from .network import EstimatorModel, NetConfig

FORMAT = "fingerpose-checkpoint/1"


def save_checkpoint(path, model: EstimatorModel, **meta) -> None:
    header = {
        "format": FORMAT,
        "config": model.config.to_dict(),
        "layout": [[name, list(shape), offset] for name, (offset, shape) in model.layout.items()],
        "n_params": model.n_params,
        **meta,
    }
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = model.params.astype("<f8").tobytes()
    Path(path).write_bytes(line + b"\n" + payload)


def load_checkpoint(path) -> tuple[EstimatorModel, dict]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise InvalidArgumentError(f"{path}: missing checkpoint header")
    header = json.loads(raw[:nl].decode("utf-8"))
    if header.get("format") != FORMAT:
        raise InvalidArgumentError(f"{path}: unknown checkpoint format {header.get('format')!r}")
    params = np.frombuffer(raw[nl + 1 :], dtype="<f8").astype(np.float64)
    if params.size != header["n_params"]:
        raise InvalidArgumentError(f"{path}: expected {header['n_params']} parameters, found {params.size}")
    model = EstimatorModel(NetConfig.from_dict(header["config"]), params)
    stored = [[name, list(shape), offset] for name, (offset, shape) in model.layout.items()]
    if stored != header["layout"]:
        raise InvalidArgumentError(f"{path}: layer layout does not match its config")
    return model, header
