"""Versioned, byte-deterministic checkpoint container.

Layout: ``MAGIC | u32 version | u64 header length | JSON header | tensor blob``.
The header (sorted keys) carries metadata and an index of tensors; tensors
are stored contiguously in insertion order as raw little-endian bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np
import torch

MAGIC = b"SEMCOMCK"
VERSION = 1

_DTYPES = {
    torch.float32: "float32",
    torch.float64: "float64",
    torch.int64: "int64",
    torch.int32: "int32",
    torch.uint8: "uint8",
    torch.bool: "bool",
}
_NP = {v: np.dtype(v) for v in _DTYPES.values()}


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, torch.Tensor], meta: dict[str, Any]) -> bytes:
    index = []
    chunks = []
    offset = 0
    for name, t in tensors.items():
        t = t.detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {t.dtype} for {name}")
        raw = t.numpy().astype(_NP[_DTYPES[t.dtype]].newbyteorder("<"), copy=False).tobytes()
        index.append({"name": name, "dtype": _DTYPES[t.dtype], "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "tensors": index}, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(chunks)


def loads(data: bytes) -> tuple[dict[str, torch.Tensor], dict[str, Any]]:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", data, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = len(MAGIC) + struct.calcsize("<IQ")
    header = json.loads(data[start : start + hlen])
    blob = memoryview(data)[start + hlen :]
    tensors = {}
    for item in header["tensors"]:
        dt = _NP[item["dtype"]].newbyteorder("<")
        arr = np.frombuffer(blob[item["offset"] : item["offset"] + item["nbytes"]], dtype=dt)
        tensors[item["name"]] = torch.from_numpy(arr.astype(dt.newbyteorder("="), copy=True).reshape(item["shape"]))
    return tensors, header["meta"]


def save(path: str | Path, tensors: dict[str, torch.Tensor], meta: dict[str, Any]) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load(path: str | Path) -> tuple[dict[str, torch.Tensor], dict[str, Any]]:
    return loads(Path(path).read_bytes())
