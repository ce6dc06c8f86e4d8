"""Binary tensor files.

Layout (all little-endian)::

    magic   4 bytes  b"SMT1"
    dtype   1 byte   0 = float32, 1 = int32
    rank    uint32
    dims    rank x uint32
    payload row-major elements

Label tensors are int32 with -1 for IGNORE.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import XmfuseError

MAGIC = b"SMT1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i4")}


class TensorFormatError(XmfuseError, ValueError):
    pass


def encode(array) -> bytes:
    a = np.asarray(array)
    if a.dtype.kind == "f":
        code = 0
    elif a.dtype.kind in "iub":
        code = 1
        if a.size and (a.min() < np.iinfo(np.int32).min or a.max() > np.iinfo(np.int32).max):
            raise TensorFormatError("integer values do not fit in int32")
    else:
        raise TensorFormatError(f"unsupported dtype {a.dtype}")
    payload = np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes()
    header = MAGIC + struct.pack("<BI", code, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return header + payload


def decode(data: bytes) -> np.ndarray:
    if len(data) < 9 or data[:4] != MAGIC:
        raise TensorFormatError("bad magic")
    code, rank = struct.unpack_from("<BI", data, 4)
    if code not in _DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}")
    off = 9 + 4 * rank
    if len(data) < off:
        raise TensorFormatError("truncated header")
    dims = struct.unpack_from(f"<{rank}I", data, 9)
    dt = _DTYPES[code]
    expected = dt.itemsize * int(np.prod(dims, dtype=np.int64))
    if len(data) - off != expected:
        raise TensorFormatError(f"payload is {len(data) - off} bytes, expected {expected}")
    return np.frombuffer(data, dtype=dt, offset=off).reshape(dims).copy()


def write_tensor(path: str | Path, array):
    Path(path).write_bytes(encode(array))


def read_tensor(path: str | Path) -> np.ndarray:
    return decode(Path(path).read_bytes())
