"""Versioned binary container for named tensors plus a JSON metadata blob.

Used for model checkpoints (all layer tensors with named keys + training
config) and for the PCA model inside dataset archives. The format is
byte-reproducible: fixed magic, sorted keys, little-endian arrays, no
timestamps, so identical contents hash identically.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"GSAR"
VERSION = 1


def save_archive(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write tensors + metadata to a single file, overwriting."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    header = {
        "version": VERSION,
        "meta": meta or {},
        "tensors": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint64(len(header_bytes)).tobytes())
        fh.write(header_bytes)
        for raw in blobs:
            fh.write(raw)


def load_archive(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back (tensors, meta). Raises ValueError on a foreign file."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a garmentspace archive")
        (hlen,) = np.frombuffer(fh.read(8), dtype=np.uint64)
        header = json.loads(fh.read(int(hlen)).decode("utf-8"))
        if header["version"] > VERSION:
            raise ValueError(f"{path}: archive version {header['version']} is newer than supported {VERSION}")
        body = fh.read()
    tensors = {}
    for ent in header["tensors"]:
        raw = body[ent["offset"] : ent["offset"] + ent["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(ent["dtype"])).reshape(ent["shape"]).copy()
        tensors[ent["name"]] = arr
    return tensors, header["meta"]
