"""Binary persistence: single arrays (MRFT) and named-array tables (MRFP)."""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .tensor import _contiguous, _deserialize, _serialize, load_array, save_array

__all__ = ["save_array", "load_array", "save_named", "load_named", "sha256_of"]

_TABLE_MAGIC = b"MRFP"


def save_named(path, arrays: dict[str, np.ndarray]) -> None:
    """Write an ordered name -> array table (checkpoints, bases, maps)."""
    with open(path, "wb") as f:
        f.write(_TABLE_MAGIC + struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)) + raw)
            f.write(_serialize(_contiguous(arr)))


def load_named(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _TABLE_MAGIC:
        raise ValueError(f"bad magic in table file {path}")
    (count,) = struct.unpack_from("<I", blob, 4)
    offset = 8
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + nlen].decode("utf-8")
        offset += nlen
        arr, offset = _deserialize(blob, offset)
        out[name] = arr
    if offset != len(blob):
        raise ValueError(f"trailing bytes in table file {path}")
    return out


def sha256_of(obj) -> str:
    """Stable short hash of a JSON-serializable object (config fingerprints)."""
    canon = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]
