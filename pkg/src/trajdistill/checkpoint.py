"""Binary checkpoint format: named little-endian float32 tensors with shape headers.

Layout::

    b"MVNT" | u32 version | u32 meta_len | meta JSON (utf-8) | u32 count
    per tensor: u16 name_len | name | u8 ndim | u32 dims... | f32 data (C order)
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import ParseError

MAGIC = b"MVNT"
VERSION = 1


def encode(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    meta_b = json.dumps(meta or {}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_b)), meta_b, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if buf[:4] != MAGIC:
        raise ParseError("not a checkpoint (bad magic)")
    try:
        off = 4
        version, mlen = struct.unpack_from("<II", buf, off)
        if version != VERSION:
            raise ParseError(f"unsupported checkpoint version {version}")
        off += 8
        meta = json.loads(buf[off:off + mlen].decode())
        off += mlen
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + nlen].decode()
            off += nlen
            (ndim,) = struct.unpack_from("<B", buf, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if off + 4 * size > len(buf):
                raise ParseError(f"tensor {name} truncated")
            out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(shape).astype(np.float64)
            off += 4 * size
    except struct.error as exc:
        raise ParseError(f"truncated checkpoint: {exc}") from exc
    if off != len(buf):
        raise ParseError("trailing bytes after last tensor")
    return out, meta


def atomic_write(path: str, data: bytes | str) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path: str, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    atomic_write(path, encode(tensors, meta))


def load(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        return decode(f.read())


def save_module(path: str, module, meta: dict | None = None) -> None:
    save(path, module.state_dict(), meta)


def load_module(path: str, module) -> dict:
    tensors, meta = load(path)
    module.load_state_dict(tensors)
    return meta
