"""Checkpoint container: length-prefixed JSON header + raw tensor blob.

Layout: 8-byte little-endian u64 giving the header length, the UTF-8 JSON
header, then the concatenation of all tensor payloads. The header carries
per-tensor name/shape/dtype/offset/length plus a free-form ``meta`` dict.
float32 tensors round-trip bit-exactly. Writes go through a temp file and
os.replace so a crash cannot leave a torn checkpoint behind.
"""

import json
import os
import struct

import numpy as np

from ..errors import DataError, ShapeError

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


def save_checkpoint(path, tensors, meta=None):
    """Write named arrays plus a metadata dict. tensors: dict name -> ndarray."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)  # would also flatten 0-d, so gate it
        if arr.dtype not in _NAMES:
            raise DataError(f"checkpoint tensor {name!r} has unsupported dtype {arr.dtype}")
        code = _NAMES[arr.dtype]
        raw = arr.astype(_DTYPES[code], copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": code,
                        "offset": offset, "length": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"tensors": entries, "meta": meta or {}}).encode()
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Read a checkpoint back as (dict name -> ndarray, meta dict)."""
    with open(path, "rb") as f:
        prefix = f.read(8)
        if len(prefix) != 8:
            raise DataError(f"{path}: truncated checkpoint header prefix")
        (hlen,) = struct.unpack("<Q", prefix)
        raw_header = f.read(hlen)
        if len(raw_header) != hlen:
            raise DataError(f"{path}: truncated checkpoint header")
        try:
            header = json.loads(raw_header.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DataError(f"{path}: bad checkpoint header: {e}") from e
        blob = f.read()
    if not isinstance(header, dict) or "tensors" not in header:
        raise DataError(f"{path}: checkpoint header missing tensor table")
    tensors = {}
    for ent in header["tensors"]:
        try:
            name, shape, code = ent["name"], tuple(ent["shape"]), ent["dtype"]
            off, length = int(ent["offset"]), int(ent["length"])
        except (KeyError, TypeError) as e:
            raise DataError(f"{path}: malformed tensor entry: {e}") from e
        if code not in _DTYPES:
            raise DataError(f"{path}: tensor {name!r} has unknown dtype {code!r}")
        dt = _DTYPES[code]
        expect = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if length != expect or off < 0 or off + length > len(blob):
            raise DataError(f"{path}: tensor {name!r} does not fit its declared span")
        arr = np.frombuffer(blob, dtype=dt, count=expect // dt.itemsize, offset=off)
        tensors[name] = arr.reshape(shape).copy()
    return tensors, header.get("meta", {})


def module_state(module):
    """All parameters and buffers of a module as a name -> ndarray dict."""
    state = {}
    for name, t in module.named_parameters():
        state[name] = t.data
    for name, t in module.named_buffers():
        state[name] = t.data
    return state


def load_module_state(module, state):
    """Load a state dict produced by module_state; strict on names and shapes."""
    seen = set()
    for name, t in list(module.named_parameters()) + list(module.named_buffers()):
        if name not in state:
            raise DataError(f"checkpoint is missing tensor {name!r}")
        arr = state[name]
        if tuple(arr.shape) != t.data.shape:
            raise ShapeError(f"tensor {name!r}: checkpoint shape {arr.shape} != model {t.data.shape}")
        t.data = np.ascontiguousarray(arr, dtype=t.data.dtype)
        seen.add(name)
    extra = [k for k in state if k not in seen and not k.startswith("opt.")]
    if extra:
        raise DataError(f"checkpoint has unexpected tensors: {sorted(extra)[:5]}")
