"""Checkpoint files.

Layout (little-endian)::

    b"DS2C-PARAMS"  u16 version  u32 meta_len  meta (UTF-8 JSON, sorted keys)
    u32 n_tensors
    n_tensors x { u16 name_len, name, u8 dtype (0=f32, 1=f64), u8 ndim,
                  ndim x u32 dims, raw data }
    u32 CRC32 of everything above
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from ..autodiff import Tensor
from .blocks import ModelParams

MAGIC = b"DS2C-PARAMS"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


def dumps(params: ModelParams) -> bytes:
    meta = json.dumps(params.meta, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<HI", VERSION, len(meta)), meta, struct.pack("<I", len(params.tensors))]
    for name, t in params.tensors.items():
        key = name.encode()
        arr = np.ascontiguousarray(t.data)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        parts.append(struct.pack("<H", len(key)) + key + struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype(_DTYPES[code], copy=False).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(data: bytes) -> ModelParams:
    if len(data) < len(MAGIC) + 4 or not data.startswith(MAGIC):
        raise CheckpointError("not a parameter checkpoint (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("checkpoint CRC mismatch (truncated or corrupted file)")
    off = len(MAGIC)
    version, meta_len = struct.unpack_from("<HI", body, off)
    if version != VERSION:
        raise VersionError(f"unknown checkpoint version {version}")
    off += 6
    meta = json.loads(body[off:off + meta_len].decode())
    off += meta_len
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (klen,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + klen].decode()
        off += klen
        code, ndim = struct.unpack_from("<BB", body, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        dt = _DTYPES[code]
        n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(body, dtype=dt, count=n // dt.itemsize, offset=off).reshape(shape)
        off += n
        tensors[name] = Tensor(arr.astype(dt.newbyteorder("="), copy=True), requires_grad=True, name=name)
    if off != len(body):
        raise CheckpointError(f"{len(body) - off} trailing bytes after tensor table")
    return ModelParams(tensors, meta)


def save_params(params: ModelParams, path) -> None:
    """Write atomically: a partial file never replaces a good checkpoint."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(params))
    os.replace(tmp, path)


def load_params(path) -> ModelParams:
    return loads(Path(path).read_bytes())
