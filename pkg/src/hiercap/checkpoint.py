"""Named-tensor checkpoint container.

Layout (all integers little-endian):

    bytes 0..7    magic ``b"HCTENSR1"``
    bytes 8..15   uint64 header length H
    bytes 16..16+H  UTF-8 JSON header::

        {"meta": {...},                      # free-form JSON metadata
         "tensors": [{"name": str,
                      "shape": [int, ...],
                      "offset": int},        # into the data section
                     ...]}

    bytes 16+H..  data section: per tensor, row-major float64
                  little-endian values, ``prod(shape)`` of them,
                  at the stated offset (in bytes).

Headers are serialized with sorted keys and fixed separators, so a file
written from identical contents is byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DataError

MAGIC = b"HCTENSR1"


def save_tensors(path, tensors: dict, meta: dict | None = None) -> None:
    """Write ``{name: ndarray}`` plus optional metadata to ``path``."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float64)
        blob = arr.astype("<f8").tobytes(order="C")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"meta": meta or {}, "tensors": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_tensors(path):
    """Read a container; returns ``({name: ndarray}, meta)``."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise DataError(f"{path} is not a tensor container")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"corrupt container header in {path}") from e
    data = raw[16 + hlen:]
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        block = data[start:start + 8 * count]
        if len(block) != 8 * count:
            raise DataError(f"truncated tensor {entry['name']} in {path}")
        tensors[entry["name"]] = np.frombuffer(block, dtype="<f8").reshape(shape).copy()
    return tensors, header.get("meta", {})
