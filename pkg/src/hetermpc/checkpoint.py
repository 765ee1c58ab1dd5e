"""Checkpoint container format.

Byte layout, in file order:

  1. 8 bytes: little-endian uint64, byte length of the JSON header
  2. header: UTF-8 JSON
       {"version": 1, "dtype": "float32",
        "params": {name: {"offset": <element offset into blob>,
                          "shape": [...]}, ...}}
  3. blob: the concatenation of every parameter, flattened row-major,
     as little-endian 32-bit floats, in header order

Loading copies the blob into an existing parameter set and fails loudly on
any mismatch, naming the offending tensor.
"""

from __future__ import annotations

import json

import numpy as np


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, named_params: dict) -> None:
    header = {"version": 1, "dtype": "float32", "params": {}}
    offset = 0
    blobs = []
    for name, tensor in named_params.items():
        arr = np.ascontiguousarray(tensor.data, dtype=np.float32)
        header["params"][name] = {"offset": offset, "shape": list(arr.shape)}
        blobs.append(arr.reshape(-1))
        offset += arr.size
    blob = np.concatenate(blobs) if blobs else np.zeros(0, dtype=np.float32)
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(np.uint64(len(header_bytes)).tobytes())
        f.write(header_bytes)
        f.write(blob.astype("<f4").tobytes())


def load_checkpoint(path, named_params: dict) -> None:
    """Fill the given parameters in place from a checkpoint file."""
    with open(path, "rb") as f:
        raw = f.read(8)
        if len(raw) != 8:
            raise CheckpointError(f"{path}: truncated header length")
        header_len = int(np.frombuffer(raw, dtype="<u8")[0])
        try:
            header = json.loads(f.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: bad header: {exc}") from exc
        blob = np.frombuffer(f.read(), dtype="<f4")

    stored = header.get("params", {})
    missing = set(named_params) - set(stored)
    extra = set(stored) - set(named_params)
    if missing:
        raise CheckpointError(f"checkpoint lacks parameter {sorted(missing)[0]!r}")
    if extra:
        raise CheckpointError(f"checkpoint has unexpected parameter {sorted(extra)[0]!r}")
    for name, tensor in named_params.items():
        meta = stored[name]
        shape = tuple(meta["shape"])
        if shape != tensor.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {shape}, model {tensor.data.shape}"
            )
        start = meta["offset"]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        chunk = blob[start:start + count]
        if chunk.size != count:
            raise CheckpointError(f"blob truncated while reading {name!r}")
        tensor.data[...] = chunk.reshape(shape).astype(tensor.data.dtype)
