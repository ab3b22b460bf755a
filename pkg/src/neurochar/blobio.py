"""Binary tensor blob format shared by datasets and checkpoints.

Layout: magic ``B2CT`` | version u16 | dtype code u8 (0=float32, 1=float64)
| rank u8 | dims as u32 each, all little-endian, then the row-major
little-endian payload.
"""

from __future__ import annotations

import struct
import zlib
from typing import BinaryIO

import numpy as np

from .errors import FormatError

MAGIC = b"B2CT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def blob_bytes(array: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(array)
    code = _CODES.get(arr.dtype)
    if code is None:
        raise FormatError(f"unsupported dtype {arr.dtype}; blobs hold float32/float64")
    header = MAGIC + struct.pack("<HBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.astype(_DTYPES[code], copy=False).tobytes()


def write_blob(fh: BinaryIO, array: np.ndarray) -> int:
    """Append one blob at the current position; returns bytes written."""
    data = blob_bytes(array)
    fh.write(data)
    return len(data)


def read_blob(fh: BinaryIO, path: str = "") -> np.ndarray:
    head = fh.read(8)
    if len(head) < 8 or head[:4] != MAGIC:
        raise FormatError(f"bad blob header magic {head[:4]!r}", path=path or None)
    version, code, rank = struct.unpack("<HBB", head[4:8])
    if version != VERSION:
        raise FormatError(f"unsupported blob version {version}", path=path or None)
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}", path=path or None)
    dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
    count = 1
    for d in dims:
        count *= d
    payload = fh.read(count * _DTYPES[code].itemsize)
    if len(payload) != count * _DTYPES[code].itemsize:
        raise FormatError("truncated blob payload", path=path or None)
    return np.frombuffer(payload, dtype=_DTYPES[code]).reshape(dims).copy()


def checksum(array: np.ndarray) -> int:
    """crc32 of the canonical payload bytes (used by checkpoint manifests)."""
    arr = np.ascontiguousarray(array)
    return zlib.crc32(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()) & 0xFFFFFFFF
