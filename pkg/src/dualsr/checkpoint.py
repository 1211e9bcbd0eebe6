"""Flat binary checkpoint container.

Layout: magic, format version, JSON manifest (UTF-8), then one record per
array: name, dtype tag, shape, raw little-endian values. Round-trips are
bit-exact. Writes go to a temp file in the target directory and are
renamed into place, so a crash never leaves a truncated checkpoint under
the final name.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import ConfigurationError

MAGIC = b"DSRCKPT1"
_VERSION = 1


def _pack_bytes(payload: bytes) -> bytes:
    return struct.pack("<Q", len(payload)) + payload


def _pack_str(s: str) -> bytes:
    return _pack_bytes(s.encode("utf-8"))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ConfigurationError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def blob(self) -> bytes:
        return self.take(self.u64())

    def text(self) -> str:
        return self.blob().decode("utf-8")


def save_checkpoint(path, arrays: dict[str, np.ndarray], manifest: dict) -> None:
    chunks = [MAGIC, struct.pack("<I", _VERSION)]
    chunks.append(_pack_str(json.dumps(manifest, sort_keys=True)))
    chunks.append(struct.pack("<Q", len(arrays)))
    for name, arr in arrays.items():
        a = np.asarray(arr)
        if not a.flags.c_contiguous:
            a = np.ascontiguousarray(a)
        le = a.astype(a.dtype.newbyteorder("<"), copy=False)
        chunks.append(_pack_str(name))
        chunks.append(_pack_str(le.dtype.str))
        chunks.append(struct.pack("<I", a.ndim))
        chunks.extend(struct.pack("<Q", d) for d in a.shape)
        chunks.append(_pack_bytes(le.tobytes()))
    payload = b"".join(chunks)

    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise ConfigurationError(f"{path}: not a checkpoint file")
    version = struct.unpack("<I", r.take(4))[0]
    if version != _VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {version}")
    manifest = json.loads(r.text())
    arrays: dict[str, np.ndarray] = {}
    count = r.u64()
    for _ in range(count):
        name = r.text()
        dtype = np.dtype(r.blob().decode("ascii"))
        ndim = struct.unpack("<I", r.take(4))[0]
        shape = tuple(r.u64() for _ in range(ndim))
        raw = r.blob()
        expected = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        if len(raw) != expected:
            raise ConfigurationError(f"{path}: record {name!r} has wrong payload size")
        arr = np.frombuffer(raw, dtype=dtype).reshape(shape)
        arrays[name] = arr.astype(dtype.newbyteorder("="))
    if r.pos != len(buf):
        raise ConfigurationError(f"{path}: trailing bytes after last record")
    return arrays, manifest
