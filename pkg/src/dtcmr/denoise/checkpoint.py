"""Model checkpoint container.

Layout (little endian)::

    b"DTDN"            magic
    uint16 version     currently 1
    uint32 n           length of the JSON header in bytes
    n bytes            UTF-8 JSON: architecture, norm stats, provenance,
                       ordered parameter names and shapes
    float64[...]       parameters, concatenated in header order

A human-readable training manifest is written next to it as ``<stem>.json``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..exceptions import ValidationError
from .networks import UNet
from .normalization import NormStats
from .training import DenoiserModel

MAGIC = b"DTDN"
VERSION = 1
_HEAD = struct.Struct("<4sHI")


def save_model(model: DenoiserModel, path, manifest=None):
    path = Path(path)
    state = model.net.state_dict()
    header = {
        "architecture": model.net.descriptor(),
        "input_stats": model.input_stats.to_dict(),
        "target_stats": model.target_stats.to_dict(),
        "input_kind": model.input_kind,
        "seed": model.seed,
        "config_hash": model.config_hash,
        "parameters": [[k, list(v.shape)] for k, v in state.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    weights = [v.detach().double().cpu().numpy().astype("<f8").ravel() for v in state.values()]
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for w in weights:
            fh.write(w.tobytes())
    manifest = {**model.provenance, **(manifest or {}),
                "seed": model.seed, "config_hash": model.config_hash}
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True,
                                                    default=str) + "\n")
    return path


def load_model(path) -> DenoiserModel:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEAD.size:
        raise ValidationError(f"{path}: truncated checkpoint")
    magic, version, n = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise ValidationError(f"{path}: not a DTDN checkpoint")
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[_HEAD.size:_HEAD.size + n].decode())
    arch = dict(header["architecture"])
    if arch.pop("type") != "UNet":
        raise ValidationError(f"{path}: unknown architecture")
    net = UNet(**arch).double()
    offset = _HEAD.size + n
    state = {}
    for name, shape in header["parameters"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise ValidationError(f"{path}: truncated weights")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
        state[name] = torch.from_numpy(arr.copy())
        offset = end
    if offset != len(data):
        raise ValidationError(f"{path}: trailing bytes in checkpoint")
    net.load_state_dict(state)
    net.eval()
    manifest_path = path.with_suffix(".json")
    provenance = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    return DenoiserModel(net, NormStats.from_dict(header["input_stats"]),
                         NormStats.from_dict(header["target_stats"]),
                         header["input_kind"], header["seed"], header["config_hash"],
                         provenance)
