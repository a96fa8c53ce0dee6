"""Binary tensor file format used across the CLI.

Layout: an 8-byte little-endian unsigned header length, a UTF-8 JSON header
{dtype, shape, spacing_mm, role}, then the row-major little-endian payload.
Round-trips are bit-exact for float32/float64 arrays.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import Grid2D

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


def tensor_bytes(values: np.ndarray, spacing_mm: tuple[float, float], role: str) -> bytes:
    """Serialize a 2D array; spacing_mm is (axial, lateral)."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("tensor files hold 2D arrays")
    name = _DTYPE_NAMES.get(values.dtype)
    if name is None:
        raise ValueError(f"unsupported dtype {values.dtype}; use float32 or float64")
    header = json.dumps(
        {
            "dtype": name,
            "shape": [int(values.shape[0]), int(values.shape[1])],
            "spacing_mm": [float(spacing_mm[0]), float(spacing_mm[1])],
            "role": role,
        }
    ).encode("utf-8")
    payload = np.ascontiguousarray(values, dtype=_DTYPES[name]).tobytes()
    return struct.pack("<Q", len(header)) + header + payload


def parse_tensor(blob: bytes) -> tuple[np.ndarray, tuple[float, float], str]:
    """Inverse of tensor_bytes: (values, (axial, lateral) spacing, role)."""
    if len(blob) < 8:
        raise ValueError("truncated tensor blob")
    (hlen,) = struct.unpack("<Q", blob[:8])
    header = json.loads(blob[8 : 8 + hlen].decode("utf-8"))
    dtype = _DTYPES[header["dtype"]]
    shape = tuple(header["shape"])
    n = shape[0] * shape[1] * dtype.itemsize
    payload = blob[8 + hlen : 8 + hlen + n]
    if len(payload) != n:
        raise ValueError("tensor payload size mismatch")
    values = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    spacing = tuple(header["spacing_mm"])
    return values, (spacing[0], spacing[1]), header["role"]


def save_tensor(path, values, spacing_mm, role: str) -> None:
    Path(path).write_bytes(tensor_bytes(values, spacing_mm, role))


def load_tensor(path) -> tuple[np.ndarray, tuple[float, float], str]:
    return parse_tensor(Path(path).read_bytes())


def grid_of(values: np.ndarray, spacing_mm: tuple[float, float]) -> Grid2D:
    """Grid implied by a loaded tensor (origin information is not stored)."""
    return Grid2D(values.shape[1], values.shape[0], spacing_mm[1], spacing_mm[0])


def save_pgm(path, image: np.ndarray) -> None:
    """8-bit binary portable graymap of an array already scaled to [0, 1]."""
    img = np.clip(np.asarray(image), 0.0, 1.0)
    data = np.round(img * 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())
