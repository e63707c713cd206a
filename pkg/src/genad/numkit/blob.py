"""Binary tensor blobs: ``GADT`` magic, u32 version, u32 rank, u32 dims, f64 LE payload."""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"GADT"
VERSION = 1


class CorruptBlobError(ValueError):
    pass


def dumps(array) -> bytes:
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    head = MAGIC + struct.pack("<II", VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes(order="C")


def loads(buf: bytes) -> np.ndarray:
    arr, used = _read(buf, 0)
    if used != len(buf):
        raise CorruptBlobError(f"{len(buf) - used} trailing bytes after tensor payload")
    return arr


def _read(buf: bytes, off: int) -> tuple[np.ndarray, int]:
    if len(buf) < off + 12:
        raise CorruptBlobError("truncated header")
    if buf[off:off + 4] != MAGIC:
        raise CorruptBlobError("bad magic")
    version, rank = struct.unpack_from("<II", buf, off + 4)
    if version != VERSION:
        raise CorruptBlobError(f"unsupported blob version {version}")
    off += 12
    if len(buf) < off + 4 * rank:
        raise CorruptBlobError("truncated dims")
    dims = struct.unpack_from(f"<{rank}I", buf, off)
    off += 4 * rank
    nbytes = 8 * int(np.prod(dims, dtype=np.int64))
    if len(buf) < off + nbytes:
        raise CorruptBlobError(f"payload truncated: need {nbytes} bytes, have {len(buf) - off}")
    arr = np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=off).reshape(dims)
    return arr.astype(np.float64), off + nbytes


def save(path, array) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(array))


def load(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return loads(fh.read())
