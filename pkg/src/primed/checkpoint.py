"""Flat binary checkpoint format with deterministic bytes.

Layout: magic line, little-endian uint64 header length, JSON header
(sorted keys), then each array's raw C-order bytes in header order.
Zip-based containers stamp file mtimes into their central directory, which
breaks write-twice byte equality; this format has no timestamps, so saving
the same state twice yields identical files and loading returns bitwise
identical arrays.
"""
from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"PRIMEDCKPT1\n"


class CheckpointError(ValueError):
    """File is not a readable checkpoint of the expected kind."""


def save_checkpoint(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    for name in sorted(arrays):
        # asarray keeps 0-d shapes; ascontiguousarray would promote them to 1-d
        arr = np.asarray(arrays[name], order="C")
        if arr.dtype not in (np.dtype(np.float64), np.dtype(np.int64)):
            raise CheckpointError(f"array {name!r} has unsupported dtype {arr.dtype}")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name})
        blobs.append(arr.tobytes())
    header = json.dumps({"kind": kind, "meta": meta, "arrays": entries},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, expected_kind: str | None = None):
    """Returns (kind, meta, arrays). Bitwise faithful to what was saved."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(shape, dtype=np.int64))
            nbytes = dtype.itemsize * count
            buf = fh.read(nbytes)
            if len(buf) != nbytes:
                raise CheckpointError(f"{path}: truncated array {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype=dtype, count=count).reshape(shape).copy()
    kind = header["kind"]
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"{path}: checkpoint kind {kind!r}, expected {expected_kind!r}")
    return kind, header["meta"], arrays
