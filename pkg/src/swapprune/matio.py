"""Binary matrix files and JSON weight files.

The matrix format is fixed: an 8-byte ASCII magic ``SWAPMAT1``, a little-
endian u32 version (currently 1), little-endian u64 row and column counts,
then ``n * p`` little-endian IEEE-754 doubles in row-major order.  Reads
validate the header and the payload length against the file size before
allocating anything, and round trips are bit-exact.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

__all__ = ["MAGIC", "VERSION", "read_matrix", "write_matrix",
           "load_weights", "save_weights"]

MAGIC = b"SWAPMAT1"
VERSION = 1
_HEADER = struct.Struct("<IQQ")
HEADER_BYTES = len(MAGIC) + _HEADER.size


class MatrixFormatError(ValueError):
    """Raised for malformed matrix files."""


def write_matrix(path, matrix: np.ndarray) -> None:
    m = np.ascontiguousarray(np.asarray(matrix, dtype="<f8"))
    if m.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {m.shape}")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_HEADER.pack(VERSION, m.shape[0], m.shape[1]))
        f.write(m.tobytes(order="C"))


def read_matrix(path) -> np.ndarray:
    size = os.stat(path).st_size
    with open(path, "rb") as f:
        header = f.read(HEADER_BYTES)
        if len(header) < HEADER_BYTES:
            raise MatrixFormatError(f"{path}: truncated header")
        if header[: len(MAGIC)] != MAGIC:
            raise MatrixFormatError(
                f"{path}: bad magic {header[:len(MAGIC)]!r}, expected {MAGIC!r}"
            )
        version, n, p = _HEADER.unpack(header[len(MAGIC) :])
        if version != VERSION:
            raise MatrixFormatError(
                f"{path}: unsupported version {version}, expected {VERSION}"
            )
        expected = HEADER_BYTES + 8 * n * p
        if size != expected:
            raise MatrixFormatError(
                f"{path}: payload length mismatch: file is {size} bytes, "
                f"header implies {expected} ({n} x {p} doubles)"
            )
        data = f.read(8 * n * p)
    return np.frombuffer(data, dtype="<f8").reshape(n, p).astype(float)


def save_weights(path, layer_dims, flat_weights: np.ndarray, activation: str) -> None:
    """Weights as JSON with a dims header; float repr round-trips exactly."""
    payload = {
        "dims": [int(d) for d in layer_dims],
        "activation": activation,
        "weights": [float(v) for v in np.asarray(flat_weights, dtype=float)],
    }
    with open(path, "w") as f:
        json.dump(payload, f)
        f.write("\n")


def load_weights(path):
    with open(path) as f:
        payload = json.load(f)
    for key in ("dims", "activation", "weights"):
        if key not in payload:
            raise ValueError(f"{path}: weights file missing {key!r}")
    dims = tuple(int(d) for d in payload["dims"])
    flat = np.asarray(payload["weights"], dtype=float)
    return dims, flat, payload["activation"]
