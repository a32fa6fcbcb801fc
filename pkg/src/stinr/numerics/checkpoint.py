"""Flat binary parameter container.

Byte layout (all integers little-endian):

    offset 0   8 bytes   magic b"STINRCK\\0"
    offset 8   uint32    format version (currently 1)
    offset 12  uint64    header length L in bytes
    offset 20  L bytes   UTF-8 JSON header:
                           {"version": 1,
                            "config": {...},          # ModelConfig and friends
                            "meta": {...},            # free-form (iteration, rng state, ...)
                            "entries": [{"name": str, "shape": [int, ...]}, ...]}
    then, for each entry in header order, prod(shape) little-endian float64
    values in row-major order, with no padding between arrays.

float32 parameters are widened to float64 on save; narrowing back on load is
exact, so save/load round-trips are bit-exact for both precisions.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"STINRCK\0"
FORMAT_VERSION = 1


class CheckpointError(IOError):
    pass


def save_checkpoint(path, arrays, config=None, meta=None):
    path = Path(path)
    entries = [{"name": name, "shape": list(np.shape(a))} for name, a in arrays.items()]
    header = json.dumps({"version": FORMAT_VERSION, "config": config or {}, "meta": meta or {},
                         "entries": entries}, sort_keys=True).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
            fh.write(header)
            for a in arrays.values():
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
        tmp.replace(path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path):
    """Return ``(arrays, config, meta)``; arrays are float64."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    header = json.loads(raw[20:20 + hlen].decode("utf-8"))
    offset = 20 + hlen
    arrays = {}
    for entry in header["entries"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        nbytes = 8 * n
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated at entry {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(shape).copy()
        offset += nbytes
    return arrays, header.get("config", {}), header.get("meta", {})
