"""Flat binary containers for tensor fields, DWI stacks and map sets.

Layout of a ``.dtcf`` file (all little-endian)::

    magic     4 bytes  b"DTCF"
    version   u16
    kind      u16      0 = tensor field, 1 = DWI stack, 2 = map set
    rows      u32
    cols      u32
    channels  u32
    planes    float64 * channels * rows * cols   (C order)

The last plane is always the boolean mask stored as 0.0/1.0. A JSON sidecar
with the same stem (``.json``) carries channel names, frame keys, the
acquisition protocol and free-form metadata.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import COMPONENTS, AcquisitionProtocol, DwiStack, MapSet, TensorField
from .exceptions import ValidationError

MAGIC = b"DTCF"
VERSION = 1
KIND_TENSOR, KIND_DWI, KIND_MAPS = 0, 1, 2
_HEADER = struct.Struct("<4sHHIII")


def write_planes(path, planes, kind):
    planes = np.ascontiguousarray(planes, dtype="<f8")
    c, r, k = planes.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, kind, r, k, c))
        fh.write(planes.tobytes(order="C"))


def read_planes(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValidationError(f"{path}: truncated header")
        magic, version, kind, rows, cols, channels = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ValidationError(f"{path}: not a DTCF container")
        if version != VERSION:
            raise ValidationError(f"{path}: unsupported container version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != rows * cols * channels:
        raise ValidationError(f"{path}: payload size mismatch")
    return kind, data.reshape(channels, rows, cols).astype(float)


def _sidecar(path):
    return Path(path).with_suffix(".json")


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _split_meta(meta):
    # arrays in metadata go to the sidecar only when small
    out = {}
    for k, v in meta.items():
        if isinstance(v, np.ndarray) and v.size > 64:
            continue
        out[k] = v
    return out


def save_tensor_field(path, field: TensorField):
    path = Path(path)
    planes = np.concatenate([field.components, field.mask[None].astype(float)])
    write_planes(path, planes, KIND_TENSOR)
    _dump_json(_sidecar(path), {
        "kind": "tensor_field",
        "channels": list(COMPONENTS) + ["mask"],
        "units": "mm^2/s",
        "meta": _split_meta(field.meta),
    })


def load_tensor_field(path) -> TensorField:
    kind, planes = read_planes(path)
    if kind != KIND_TENSOR or planes.shape[0] != 7:
        raise ValidationError(f"{path}: not a tensor field container")
    meta = {}
    side = _sidecar(path)
    if side.exists():
        meta = json.loads(side.read_text()).get("meta", {})
    return TensorField(planes[:6], planes[6] > 0.5, meta)


def save_dwi_stack(path, stack: DwiStack):
    path = Path(path)
    planes = np.concatenate([stack.frames, stack.mask[None].astype(float)])
    write_planes(path, planes, KIND_DWI)
    _dump_json(_sidecar(path), {
        "kind": "dwi_stack",
        "keys": [[float(b), int(d), int(r)] for b, d, r in stack.keys()],
        "protocol": stack.protocol.to_dict(),
        "meta": _split_meta(stack.meta),
    })


def load_dwi_stack(path) -> DwiStack:
    kind, planes = read_planes(path)
    if kind != KIND_DWI:
        raise ValidationError(f"{path}: not a DWI stack container")
    side = _sidecar(path)
    if not side.exists():
        raise ValidationError(f"{path}: missing JSON sidecar")
    info = json.loads(side.read_text())
    keys = np.asarray(info["keys"], dtype=float).reshape(-1, 3)
    if keys.shape[0] != planes.shape[0] - 1:
        raise ValidationError(f"{path}: sidecar keys do not match frame count")
    protocol = AcquisitionProtocol.from_dict(info["protocol"])
    return DwiStack(planes[:-1], keys[:, 0], keys[:, 1].astype(int), keys[:, 2].astype(int),
                    planes[-1] > 0.5, protocol, info.get("meta", {}))


def save_map_set(path, maps: MapSet):
    path = Path(path)
    planes = np.stack([maps.md, maps.fa, maps.ha, maps.e2a, maps.mask.astype(float)])
    write_planes(path, planes, KIND_MAPS)
    flags = {k: int(np.count_nonzero(v)) for k, v in maps.flags.items()}
    _dump_json(_sidecar(path), {
        "kind": "map_set",
        "channels": ["md", "fa", "ha", "e2a", "mask"],
        "units": {"md": "mm^2/s", "fa": "1", "ha": "deg", "e2a": "deg"},
        "flag_counts": flags,
    })


def load_map_set(path) -> MapSet:
    kind, planes = read_planes(path)
    if kind != KIND_MAPS or planes.shape[0] != 5:
        raise ValidationError(f"{path}: not a map set container")
    return MapSet(md=planes[0], fa=planes[1], ha=planes[2], e2a=planes[3], mask=planes[4] > 0.5)


def dump_json(path, obj):
    _dump_json(path, obj)
