"""Matrix and feature-map file formats.

Two interchangeable matrix encodings, auto-detected by magic bytes:

* CSV: one row per line, comma-separated decimal floats.
* Binary: ASCII magic ``OSCM``, little-endian u32 rows, u32 cols, then
  rows*cols little-endian IEEE-754 f64 values in row-major order.

Feature maps (conv calibration samples) use the same binary layout with
magic ``OSCT`` and an extra leading depth header: u32 channels, u32
height, u32 width.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .linalg import as_matrix

MATRIX_MAGIC = b"OSCM"
TENSOR_MAGIC = b"OSCT"


def write_matrix_binary(path, arr) -> None:
    arr = as_matrix(arr)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", MATRIX_MAGIC, arr.shape[0], arr.shape[1]))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def write_matrix_csv(path, arr) -> None:
    arr = as_matrix(arr)
    np.savetxt(path, arr, delimiter=",")


def read_matrix(path) -> np.ndarray:
    """Load a matrix file, sniffing binary vs CSV from the magic bytes."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head == MATRIX_MAGIC:
            rows, cols = struct.unpack("<II", fh.read(8))
            data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
            if data.size != rows * cols:
                raise ValueError(f"{path}: truncated matrix payload")
            arr = data.reshape(rows, cols).astype(np.float64)
        else:
            arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    return as_matrix(arr, name=str(path))


def write_tensor(path, arr) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"feature map must be 3-D (channels, h, w), got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", TENSOR_MAGIC, *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head != TENSOR_MAGIC:
            raise ValueError(f"{path}: not a feature-map tensor file")
        depth, height, width = struct.unpack("<III", fh.read(12))
        data = np.frombuffer(fh.read(depth * height * width * 8), dtype="<f8")
        if data.size != depth * height * width:
            raise ValueError(f"{path}: truncated tensor payload")
        arr = data.reshape(depth, height, width).astype(np.float64)
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{path} contains non-finite entries")
    return arr


def read_feature_dir(path) -> list[np.ndarray]:
    """Read every tensor file in a directory, one calibration sample each,
    in sorted filename order."""
    path = Path(path)
    files = sorted(p for p in path.iterdir() if p.is_file())
    if not files:
        raise FileNotFoundError(f"{path}: no feature-map files found")
    return [read_tensor(p) for p in files]
