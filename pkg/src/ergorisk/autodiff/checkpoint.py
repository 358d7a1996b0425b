"""Flat binary parameter files.

Layout: magic ``ERGK1``, then per parameter: name length (u32 LE), UTF-8
name, rank (u32 LE), each dim (u32 LE), and the values as float32 LE.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import DataError

MAGIC = b"ERGK1"
_U32 = struct.Struct("<I")


def dumps(named: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC]
    for name, arr in named.items():
        arr = np.asarray(getattr(arr, "data", arr))
        raw = name.encode("utf-8")
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
        parts.append(_U32.pack(arr.ndim))
        parts.extend(_U32.pack(d) for d in arr.shape)
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def loads(buf: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    if not buf.startswith(MAGIC):
        raise DataError(f"{source}: not an ERGK1 checkpoint")
    out: dict[str, np.ndarray] = {}
    pos = len(MAGIC)

    def u32():
        nonlocal pos
        if pos + 4 > len(buf):
            raise DataError(f"{source}: truncated at byte {pos}")
        (v,) = _U32.unpack_from(buf, pos)
        pos += 4
        return v

    while pos < len(buf):
        n = u32()
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        rank = u32()
        shape = tuple(u32() for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64))
        end = pos + 4 * count
        if end > len(buf):
            raise DataError(f"{source}: truncated tensor {name!r}")
        out[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
        pos = end
    return out


def save(path, named: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(named))


def load(path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read checkpoint ({exc.strerror})") from exc
    return loads(buf, str(path))
