"""Run configuration: one TOML file with per-stage tables, overridable from flags.

Layout::

    seed = 7                  # default for synth.seed, net.init_seed, train.seed
    [paths]                   # data, out, checkpoint, mapping, touches
    [synth]                   # SynthConfig fields
    [net]                     # NetConfig fields
    [train]                   # TrainConfig fields
    [mapping]                 # k, input_scale, max_touches

Unknown tables or keys are rejected before any stage runs.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields

from .errors import InvalidArgumentError
from .estimator.network import NetConfig
from .estimator.training import TrainConfig
from .simdata import SynthConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PATH_KEYS = ("data", "out", "checkpoint", "mapping", "touches")
MAPPING_KEYS = ("k", "input_scale", "max_touches")
SEEDED = {"synth": "seed", "net": "init_seed", "train": "seed"}


class MissingPathError(InvalidArgumentError):
    """A stage needs a path that neither the file nor the flags provide."""


@dataclass(frozen=True)
class RunConfig:
    seed: int | None = None
    synth: SynthConfig = SynthConfig()
    net: NetConfig = NetConfig()
    train: TrainConfig = TrainConfig()
    map_k: int = 4
    map_input_scale: tuple = (256.0, 256.0)
    max_touches: int = 8
    paths: dict = field(default_factory=dict)

    def path(self, key: str, required: bool = True):
        value = self.paths.get(key)
        if value is None and required:
            raise MissingPathError(f"missing path '{key}' (set --{key} or [paths].{key})")
        return value


def _check_keys(section: str, got: dict, allowed) -> None:
    unknown = sorted(set(got) - set(allowed))
    if unknown:
        raise InvalidArgumentError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


def _dataclass_keys(cls) -> list[str]:
    return [f.name for f in fields(cls)]


def build_config(raw: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge a parsed TOML mapping with flag overrides and validate the result.

    ``overrides`` uses the same nested layout as the file; ``None`` values
    mean "flag not given" and are ignored.
    """
    raw = dict(raw or {})
    merged: dict = {}
    for source in (raw, overrides or {}):
        for key, value in source.items():
            if isinstance(value, dict):
                merged.setdefault(key, {}).update({k: v for k, v in value.items() if v is not None})
            elif value is not None:
                merged[key] = value
    _check_keys("top level", merged, ("seed", "paths", "synth", "net", "train", "mapping"))
    tables = {name: dict(merged.get(name, {})) for name in ("paths", "synth", "net", "train", "mapping")}
    for name, table in tables.items():
        if not isinstance(merged.get(name, {}), dict):
            raise InvalidArgumentError(f"[{name}] must be a table")
    _check_keys("paths", tables["paths"], PATH_KEYS)
    _check_keys("synth", tables["synth"], [k for k in _dataclass_keys(SynthConfig) if k != "gt_mapping"])
    _check_keys("net", tables["net"], _dataclass_keys(NetConfig))
    _check_keys("train", tables["train"], _dataclass_keys(TrainConfig))
    _check_keys("mapping", tables["mapping"], MAPPING_KEYS)

    seed = merged.get("seed")
    if seed is not None:
        if isinstance(seed, bool) or int(seed) != seed:
            raise InvalidArgumentError("seed must be an integer")
        seed = int(seed)
        for name, key in SEEDED.items():
            tables[name].setdefault(key, seed)
    try:
        synth = SynthConfig(**tables["synth"])
        net = NetConfig(**tables["net"])
        train = TrainConfig(**tables["train"])
    except TypeError as exc:
        raise InvalidArgumentError(str(exc)) from exc
    mapping = tables["mapping"]
    k = int(mapping.get("k", 4))
    if k < 1:
        raise InvalidArgumentError("mapping degree k must be >= 1")
    scale = tuple(float(x) for x in mapping.get("input_scale", (256.0, 256.0)))
    if len(scale) != 2 or min(scale) <= 0:
        raise InvalidArgumentError("mapping input_scale must be two positive numbers")
    max_touches = int(mapping.get("max_touches", 8))
    if max_touches < 1:
        raise InvalidArgumentError("max_touches must be >= 1")
    paths = {key: str(value) for key, value in tables["paths"].items()}
    return RunConfig(seed, synth, net, train, k, scale, max_touches, paths)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise InvalidArgumentError(f"{path}: {exc}") from exc
    return build_config(raw, overrides)
