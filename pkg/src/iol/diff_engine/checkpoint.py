"""JSON tensor manifest: name, shape and row-major values per tensor."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from iol._json import dumps
from iol.diff_engine.nn import ParamTensor

FORMAT = "iol-params"
VERSION = 1


def params_to_manifest(params: list[ParamTensor], header: dict | None = None) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "header": header or {},
        "tensors": [
            {"name": p.name, "shape": list(p.shape), "values": p.data.reshape(-1).tolist()}
            for p in params
        ],
    }


def load_into(params: list[ParamTensor], manifest: dict) -> None:
    """Overwrite ``params`` in place from a manifest, matching by name."""
    if manifest.get("format") != FORMAT:
        raise ValueError(f"not a parameter manifest (format={manifest.get('format')!r})")
    if manifest.get("version") != VERSION:
        raise ValueError(f"unsupported manifest version {manifest.get('version')!r}")
    stored = {t["name"]: t for t in manifest["tensors"]}
    missing = [p.name for p in params if p.name not in stored]
    if missing:
        raise KeyError(f"manifest lacks tensors: {', '.join(missing)}")
    for p in params:
        t = stored[p.name]
        shape = tuple(t["shape"])
        if shape != p.shape:
            raise ValueError(f"tensor {p.name}: stored shape {shape} != expected {p.shape}")
        p.data[...] = np.asarray(t["values"], dtype=np.float64).reshape(shape)


def save_manifest(manifest: dict, path) -> None:
    Path(path).write_text(dumps(manifest) + "\n")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
