"""Checkpoint archive.

Layout (all integers little-endian)::

    b"VGRU" | u32 version | u64 tensor count
    per tensor: u32 name length | name (utf-8) | u8 dtype code | u32 ndim
                | u64 dims[ndim] | u64 payload offset | u64 nbytes
    payload: raw little-endian scalars, tensors back to back

Training metadata is a JSON document stored as the uint8 tensor ``__meta__``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"VGRU"
VERSION = 1
META = "__meta__"
DTYPES = {0: "<f4", 1: "<f8", 2: "|u1", 3: "<i8"}
CODES = {np.dtype(v): k for k, v in DTYPES.items()}


class CheckpointError(ValueError):
    pass


def save(path: str | Path, tensors: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> None:
    items = list(tensors.items())
    if meta is not None:
        items.append((META, np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)))
    table = bytearray()
    payload = bytearray()
    for name, arr in items:
        arr = np.asarray(arr)
        le = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        code = CODES.get(np.dtype(le))
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        raw = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()
        enc = name.encode()
        table += struct.pack("<I", len(enc)) + enc + struct.pack("<BI", code, arr.ndim)
        table += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        table += struct.pack("<QQ", len(payload), len(raw))
        payload += raw
    header = MAGIC + struct.pack("<IQ", VERSION, len(items))
    Path(path).write_bytes(bytes(header + table + payload))


def _read_table(buf: bytes, count: int) -> tuple[list, int]:
    pos, entries = 16, []
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, pos)
        name = buf[pos + 4 : pos + 4 + n].decode()
        pos += 4 + n
        code, ndim = struct.unpack_from("<BI", buf, pos)
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos + 5)
        pos += 5 + 8 * ndim
        off, nbytes = struct.unpack_from("<QQ", buf, pos)
        pos += 16
        if code not in DTYPES:
            raise CheckpointError(f"tensor {name!r} has unknown dtype code {code}")
        entries.append((name, code, shape, off, nbytes))
    return entries, pos


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Returns (tensors, meta); arrays are writable copies in native byte order."""
    buf = Path(path).read_bytes()
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a VGRU checkpoint")
    version, count = struct.unpack_from("<IQ", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        entries, base = _read_table(buf, count)
    except (struct.error, UnicodeDecodeError, CheckpointError) as e:
        raise CheckpointError(f"{path}: corrupt tensor table ({e})") from None
    tensors: dict[str, np.ndarray] = {}
    meta: dict[str, Any] = {}
    for name, code, shape, off, nbytes in entries:
        dt = np.dtype(DTYPES[code])
        start = base + off
        if start + nbytes > len(buf) or nbytes != dt.itemsize * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"{path}: tensor {name!r} payload is truncated or inconsistent")
        arr = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=start)
        arr = arr.reshape(shape).astype(dt.newbyteorder("="))
        if name == META:
            meta = json.loads(arr.tobytes().decode())
        else:
            tensors[name] = arr
    return tensors, meta
