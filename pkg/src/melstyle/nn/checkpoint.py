"""Checkpoints: a directory of float64 tensor files plus a manifest.

The manifest records every parameter's name, shape and trainable flag; a
separate ``meta.json`` carries whatever run context the caller supplies
(model dims, corpus statistics, training progress).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..tensorfile import read_tensor, write_tensor
from .layers import Module

MANIFEST_NAME = "params.json"
META_NAME = "meta.json"


class CheckpointError(ValueError):
    pass


def _file_for(name: str) -> str:
    return name.replace("/", "__") + ".msst"


def save_checkpoint(directory: str | Path, module: Module, meta: dict | None = None,
                    extra_arrays: dict[str, np.ndarray] | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, param in module.named_params():
        write_tensor(directory / _file_for(name), param.data, dtype="float64")
        entries.append({"name": name, "shape": list(param.data.shape),
                        "trainable": bool(param.trainable)})
    for name, array in (extra_arrays or {}).items():
        write_tensor(directory / _file_for(name), array, dtype="float64")
        entries.append({"name": name, "shape": list(np.asarray(array).shape),
                        "trainable": False})
    with open(directory / MANIFEST_NAME, "w") as fh:
        json.dump({"params": entries}, fh, indent=1, sort_keys=True)
    with open(directory / META_NAME, "w") as fh:
        json.dump(meta or {}, fh, indent=1, sort_keys=True)
    return directory


def load_meta(directory: str | Path) -> dict:
    path = Path(directory) / META_NAME
    if not path.exists():
        raise CheckpointError(f"no checkpoint meta at {path}")
    with open(path) as fh:
        return json.load(fh)


def load_checkpoint(directory: str | Path, module: Module,
                    restore_trainable: bool = True) -> dict[str, np.ndarray]:
    """Load stored values into ``module``; returns any extra arrays by name."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise CheckpointError(f"no checkpoint manifest at {manifest_path}")
    with open(manifest_path) as fh:
        manifest = {e["name"]: e for e in json.load(fh)["params"]}
    extras: dict[str, np.ndarray] = {}
    seen = set()
    for name, param in module.named_params():
        if name not in manifest:
            raise CheckpointError(f"checkpoint is missing parameter {name}")
        entry = manifest[name]
        value = read_tensor(directory / _file_for(name))
        if list(value.shape) != list(param.data.shape):
            raise CheckpointError(
                f"shape mismatch for {name}: stored {value.shape}, model {param.data.shape}")
        param.data = value
        if restore_trainable:
            param.trainable = bool(entry["trainable"])
        seen.add(name)
    for name in manifest:
        if name not in seen:
            extras[name] = read_tensor(directory / _file_for(name))
    return extras
