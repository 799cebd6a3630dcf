"""TMAT flat binary tensor files.

Layout: ``b"TMAT"``, dtype code (1 byte: 0=u8, 1=i32), rank (1 byte), one
little-endian uint32 per dim, then the row-major little-endian payload.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TMAT"
DTYPES = {0: np.dtype("<u1"), 1: np.dtype("<i4")}
CODES = {np.dtype("uint8"): 0, np.dtype("int32"): 1}


class TensorFormatError(ValueError):
    pass


def encode(array) -> bytes:
    a = np.asarray(array)
    if a.dtype not in CODES:
        raise TensorFormatError(f"TMAT stores uint8 or int32, got {a.dtype}")
    if a.ndim > 255:
        raise TensorFormatError("rank too large")
    code = CODES[a.dtype]
    header = MAGIC + struct.pack("<BB", code, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a, dtype=DTYPES[code]).tobytes()


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise TensorFormatError("missing TMAT magic")
    code, rank = struct.unpack_from("<BB", buf, 4)
    if code not in DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}")
    dims_end = 6 + 4 * rank
    if len(buf) < dims_end:
        raise TensorFormatError("truncated dims")
    dims = struct.unpack_from(f"<{rank}I", buf, 6)
    dtype = DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(buf) != dims_end + count * dtype.itemsize:
        raise TensorFormatError(f"payload is {len(buf) - dims_end} bytes, expected {count * dtype.itemsize}")
    return np.frombuffer(buf, dtype, count, dims_end).reshape(dims).astype(dtype.newbyteorder("="))


def write_tmat(path, array) -> None:
    Path(path).write_bytes(encode(array))


def read_tmat(path) -> np.ndarray:
    return decode(Path(path).read_bytes())
