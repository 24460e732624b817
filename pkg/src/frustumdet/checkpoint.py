"""Versioned binary container for named arrays plus a JSON metadata blob.

Layout (all little-endian):
  magic "FDET", u32 version, u32 entry count, then per entry
  u16 name length, utf-8 name, u8 dtype code, u8 rank, u32 dims, raw bytes.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import MalformedFileError, MissingFileError

MAGIC = b"FDET"
VERSION = 1
META_KEY = "__meta__"

_DTYPE_CODES = {0: "<f4", 1: "<f8", 2: "<i8", 3: "u1"}
_CODE_FOR = {np.dtype(v): k for k, v in _DTYPE_CODES.items()}


def _encode_entry(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _CODE_FOR:
        if arr.dtype.kind == "f":
            arr = arr.astype("<f8")
        elif arr.dtype.kind in "iu":
            arr = arr.astype("<i8")
        else:
            raise ValueError(f"cannot store dtype {arr.dtype} for {name!r}")
    name_b = name.encode("utf-8")
    head = struct.pack("<H", len(name_b)) + name_b
    head += struct.pack("<BB", _CODE_FOR[arr.dtype], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def save_checkpoint(path, tensors: dict, meta: dict | None = None):
    entries = dict(tensors)
    if meta is not None:
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        entries[META_KEY] = np.frombuffer(blob, dtype="u1")
    payload = struct.pack("<4sII", MAGIC, VERSION, len(entries))
    for name, arr in entries.items():
        payload += _encode_entry(name, np.asarray(arr))
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise MalformedFileError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    """Returns (tensors dict, meta dict)."""
    if not os.path.exists(path):
        raise MissingFileError(f"no such file: {path}")
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    magic, version, count = reader.unpack("<4sII")
    if magic != MAGIC:
        raise MalformedFileError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise MalformedFileError(f"{path}: unsupported version {version}")
    tensors, meta = {}, {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        code, rank = reader.unpack("<BB")
        if code not in _DTYPE_CODES:
            raise MalformedFileError(f"{path}: unknown dtype code {code}")
        shape = reader.unpack(f"<{rank}I") if rank else ()
        dtype = np.dtype(_DTYPE_CODES[code])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(reader.take(nbytes), dtype=dtype).reshape(shape).copy()
        tensors[name] = arr
    if reader.pos != len(reader.blob):
        raise MalformedFileError(f"{path}: trailing bytes after last entry")
    if META_KEY in tensors:
        try:
            meta = json.loads(tensors.pop(META_KEY).tobytes().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedFileError(f"{path}: bad metadata blob") from exc
    return tensors, meta
