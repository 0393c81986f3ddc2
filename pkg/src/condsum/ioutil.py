"""Binary array container: little-endian float32 payload + JSON header.

Used for cached feature files and for training checkpoints. Layout:

    magic  b"CSAR"
    u32 LE header byte length
    header JSON (utf-8): {"arrays": [{"name", "shape", "offset"}], "meta": {...}}
    raw float32 LE data

Offsets are element offsets into the flat payload.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataLoadError

_MAGIC = b"CSAR"


def write_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        flat = np.ascontiguousarray(arr, dtype="<f4").reshape(-1)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += flat.size
        blobs.append(flat.tobytes())
    header = json.dumps(
        {"format_version": 1, "arrays": entries, "meta": meta or {}},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise DataLoadError(f"array container not found: {path}")
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise DataLoadError(f"not an array container: {path}")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = np.frombuffer(fh.read(), dtype="<f4")
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arrays[entry["name"]] = payload[start : start + size].reshape(shape).copy()
    return arrays, header.get("meta", {})
