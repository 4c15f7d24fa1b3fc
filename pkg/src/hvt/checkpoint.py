"""Binary checkpoint format.

Layout::

    b"HVT1"
    uint64 LE   header length in bytes
    header      UTF-8 JSON: {"config": ..., "metadata": ..., "tensors": [manifest]}
    payload     little-endian float64 values, tensors in manifest order

Each manifest entry is ``{"name", "role", "shape", "offset"}`` where
``offset`` counts bytes from the start of the payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np

from .errors import FormatError

MAGIC = b"HVT1"
_LEN = struct.Struct("<Q")


@dataclass
class Checkpoint:
    config: Dict[str, Any]
    tensors: Dict[str, np.ndarray]
    roles: Dict[str, str]
    metadata: Dict[str, Any] = field(default_factory=dict)

    def manifest(self) -> List[Dict[str, Any]]:
        out, offset = [], 0
        for name, arr in self.tensors.items():
            out.append({"name": name, "role": self.roles[name], "shape": list(arr.shape), "offset": offset})
            offset += arr.size * 8
        return out


def to_bytes(ckpt: Checkpoint) -> bytes:
    header = json.dumps({"config": ckpt.config, "metadata": ckpt.metadata, "tensors": ckpt.manifest()},
                        sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in ckpt.tensors.values())
    return MAGIC + _LEN.pack(len(header)) + header + payload


def from_bytes(raw: bytes) -> Checkpoint:
    if raw[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 12:
        raise FormatError("checkpoint truncated inside the header length")
    (hlen,) = _LEN.unpack(raw[4:12])
    if len(raw) < 12 + hlen:
        raise FormatError("checkpoint truncated inside the header")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
        manifest = header["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}") from exc
    payload = memoryview(raw)[12 + hlen:]
    expected = sum(int(np.prod(e["shape"], dtype=np.int64)) * 8 for e in manifest)
    if expected != len(payload):
        raise FormatError(f"manifest describes {expected} payload bytes, file has {len(payload)}")
    tensors, roles, offset = {}, {}, 0
    for e in manifest:
        n = int(np.prod(e["shape"], dtype=np.int64))
        if e["offset"] != offset:
            raise FormatError(f"tensor {e['name']} offset {e['offset']} != expected {offset}")
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=offset).astype(np.float64)
        tensors[e["name"]] = arr.reshape(e["shape"])
        roles[e["name"]] = e["role"]
        offset += n * 8
    return Checkpoint(header.get("config", {}), tensors, roles, header.get("metadata", {}))


def save(path: str, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(ckpt))


def load(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
