"""Flat named-tensor checkpoint container.

Layout: magic ``PSTC``, format version (u32 LE), header length (u64 LE),
UTF-8 JSON header listing tensor names/shapes plus free-form metadata,
then the tensor payloads as little-endian float32 in header order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"PSTC"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    """Malformed or incompatible checkpoint file."""


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    header = {
        "meta": meta or {},
        "tensors": [{"name": k, "shape": list(np.asarray(v).shape)} for k, v in tensors.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(FORMAT_VERSION).astype("<u4").tobytes())
        fh.write(np.uint64(len(blob)).astype("<u8").tobytes())
        fh.write(blob)
        for k in tensors:
            fh.write(np.ascontiguousarray(tensors[k], dtype="<f4").tobytes())


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; tensors come back as float64 arrays."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ContainerError(f"{path}: not a tensor container (bad magic)")
    version = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
    if version != FORMAT_VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    hlen = int(np.frombuffer(raw[8:16], dtype="<u8")[0])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    offset = 16 + hlen
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        offset += count * 4
        tensors[entry["name"]] = data.astype(np.float64).reshape(shape)
    return tensors, header["meta"]
