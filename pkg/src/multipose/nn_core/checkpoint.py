"""Checkpoint container.

Layout::

    multipose-checkpoint\\n
    {"format_version": 1, "meta": {...}, "tensors": [{"name", "shape", "dtype"}, ...]}\\n
    <raw little-endian blocks, in manifest order>

The header is a single line of JSON so the file stays greppable.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"multipose-checkpoint\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def write_checkpoint(path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    manifest = []
    blocks = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str})
        blocks.append(np.ascontiguousarray(le).tobytes())
    header = {"format_version": FORMAT_VERSION, "meta": meta or {}, "tensors": manifest}
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for b in blocks:
            fh.write(b)
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a multipose checkpoint")
    rest = raw[len(MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(rest[:nl].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    offset = len(MAGIC) + nl + 1
    tensors = {}
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: data block for {entry['name']} is truncated")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape)
        tensors[entry["name"]] = arr.astype(dtype.newbyteorder("="))
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return tensors, header["meta"]
