"""Single-file checkpoint container.

Layout::

    magic    8 bytes   b"VSLIM\\x00\\x00\\x01" (last byte is the format version)
    length   8 bytes   little-endian u64, size of the JSON header
    header   JSON      {"config": ..., "payload_size": ..., "tensors": [...]}
    padding            zeros up to the next 64-byte boundary
    payload            raw little-endian tensors, each 64-byte aligned

Tensor offsets are relative to the payload start.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import CheckpointBoundsError, CheckpointError, CheckpointVersionError
from .tensor import Tensor
from .vit import ModelWeights, ViTConfig

MAGIC = b"VSLIM\x00\x00\x01"
ALIGN = 64
_DTYPES = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4")}


def _pad(n: int) -> int:
    return -n % ALIGN


def save_checkpoint(path, weights: ModelWeights) -> None:
    entries, offset = [], 0
    arrays = []
    for name, t in weights.params.items():
        arr = np.ascontiguousarray(t.data, dtype=t.data.dtype.newbyteorder("<"))
        dtype = arr.dtype.str
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype} for tensor {name!r}")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype,
                        "offset": offset, "nbytes": arr.nbytes})
        arrays.append(arr)
        offset += arr.nbytes + _pad(arr.nbytes)
    header = json.dumps(
        {"config": weights.config.to_dict(), "payload_size": offset, "tensors": entries},
        sort_keys=True,
    ).encode()
    prefix = MAGIC + struct.pack("<Q", len(header)) + header
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(prefix + b"\0" * _pad(len(prefix)))
        for arr in arrays:
            fh.write(arr.tobytes())
            fh.write(b"\0" * _pad(arr.nbytes))
    os.replace(tmp, path)


def load_checkpoint(path) -> ModelWeights:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror}") from exc
    if len(blob) < 16:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")
    if blob[:8] != MAGIC:
        if blob[:5] == MAGIC[:5]:
            raise CheckpointVersionError(f"{path}: unsupported format version {blob[5:8].hex()}")
        raise CheckpointVersionError(f"{path}: bad magic {blob[:8]!r}")
    (length,) = struct.unpack("<Q", blob[8:16])
    if 16 + length > len(blob):
        raise CheckpointBoundsError(f"{path}: header length {length} runs past end of file")
    try:
        header = json.loads(blob[16:16 + length])
        config = ViTConfig.from_dict(header["config"])
        entries = header["tensors"]
        payload_size = int(header["payload_size"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    start = 16 + length + _pad(16 + length)
    payload = blob[start:]
    if len(payload) < payload_size:
        raise CheckpointError(f"{path}: truncated payload ({len(payload)} of {payload_size} bytes)")
    params = {}
    for e in entries:
        try:
            name, shape, dtype = e["name"], tuple(e["shape"]), _DTYPES[e["dtype"]]
            offset, nbytes = int(e["offset"]), int(e["nbytes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: corrupt tensor directory entry {e!r}") from exc
        if offset < 0 or offset + nbytes > payload_size or offset + nbytes > len(payload):
            raise CheckpointBoundsError(
                f"{path}: tensor {name!r} spans [{offset}, {offset + nbytes}) beyond payload of {payload_size} bytes"
            )
        if nbytes != int(np.prod(shape)) * dtype.itemsize:
            raise CheckpointError(f"{path}: tensor {name!r} size does not match shape {shape}")
        arr = np.frombuffer(payload, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset)
        params[name] = Tensor(arr.reshape(shape).astype(dtype.newbyteorder("=")))
    return ModelWeights(config, params)
