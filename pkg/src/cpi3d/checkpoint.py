"""Binary checkpoint serialization with bitwise-stable round trips.

Layout: magic "EQCP", little-endian u32 format version, u32 header length,
a JSON header (sorted keys) with the config echo and the tensor directory
(name, shape, byte offset, trainable flag), then the float64 little-endian
payload, tensors concatenated in directory order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .equinet import ParameterStore
from .errors import CheckpointError

MAGIC = b"EQCP"
FORMAT_VERSION = 1


def checkpoint_bytes(params: ParameterStore, config: dict | None = None) -> bytes:
    directory = []
    payload = bytearray()
    for name in sorted(params.names()):
        data = params[name].data
        directory.append({
            "name": name,
            "shape": list(data.shape),
            "offset": len(payload),
            "trainable": params.is_trainable(name),
        })
        payload.extend(np.ascontiguousarray(data, dtype="<f8").tobytes())
    header = {
        "config": config or {},
        "tensors": directory,
        "payload_bytes": len(payload),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<I", len(header_bytes)),
        header_bytes,
        bytes(payload),
    ])


def save_checkpoint(path, params: ParameterStore, config: dict | None = None):
    blob = checkpoint_bytes(params, config)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path):
    """Returns (state: name -> array, config: dict, trainable: name -> bool)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError("bad magic bytes: not a checkpoint file")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version} "
                              f"(expected {FORMAT_VERSION})")
    (header_len,) = struct.unpack("<I", blob[8:12])
    if len(blob) < 12 + header_len:
        raise CheckpointError("truncated header")
    try:
        header = json.loads(blob[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from exc
    payload = blob[12 + header_len:]
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointError(
            f"truncated payload: {len(payload)} bytes, header says "
            f"{header.get('payload_bytes')}"
        )
    state: dict[str, np.ndarray] = {}
    trainable: dict[str, bool] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * 8
        if end > len(payload):
            raise CheckpointError(f"tensor {entry['name']!r} overruns the payload "
                                  f"(offset {start}, {count} values)")
        arr = np.frombuffer(payload[start:end], dtype="<f8").astype(np.float64)
        state[entry["name"]] = arr.reshape(shape)
        trainable[entry["name"]] = bool(entry.get("trainable", True))
    return state, header.get("config", {}), trainable
