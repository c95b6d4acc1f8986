"""Binary embedding-matrix file format.

Layout: magic "PSEM", format version (u32 LE), rows (u32 LE), dims (u32 LE),
then rows*dims float32 LE values, row-major.
"""

import os
import struct

import numpy as np

from .errors import ParseError, ValidationError

MAGIC = b"PSEM"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def write_embeddings(path, values) -> None:
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise ValidationError("embedding matrix must be 2-D")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("embedding matrix contains non-finite values")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def read_embeddings(path) -> np.ndarray:
    """Read a matrix file; values are widened to float64 in memory."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise ParseError(f"{path}: truncated header")
        magic, version, rows, dims = _HEADER.unpack(header)
        if magic != MAGIC:
            raise ParseError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise ParseError(f"{path}: unsupported format version {version}")
        payload = fh.read(rows * dims * 4)
    if len(payload) != rows * dims * 4:
        raise ParseError(f"{path}: truncated payload ({len(payload)} bytes)")
    arr = np.frombuffer(payload, dtype="<f4").reshape(rows, dims).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{path}: non-finite embedding values")
    return arr
