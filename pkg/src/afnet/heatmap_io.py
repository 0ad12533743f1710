"""Attention heatmap export: binary PGM for viewing, CSV for exact values."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError


def to_pgm_bytes(A: np.ndarray) -> bytes:
    """P5 greyscale image, ``F`` rows by ``T`` columns, min-max scaled to 0..255.

    A constant map becomes an all-zero image.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("heatmap must be 2-D")
    lo, hi = A.min(), A.max()
    scaled = np.zeros(A.shape) if hi == lo else (A - lo) / (hi - lo) * 255.0
    pixels = np.round(scaled).astype(np.uint8)
    f, t = A.shape
    return f"P5\n{t} {f}\n255\n".encode("ascii") + pixels.tobytes()


def write_pgm(path: str | Path, A: np.ndarray) -> None:
    Path(path).write_bytes(to_pgm_bytes(A))


def read_pgm(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5" or parts[3] != b"255":
        raise DataError(f"{path}: not an 8-bit binary PGM")
    t, f = int(parts[1]), int(parts[2])
    pixels = np.frombuffer(parts[4], dtype=np.uint8)
    if pixels.size != f * t:
        raise DataError(f"{path}: expected {f * t} pixels, found {pixels.size}")
    return pixels.reshape(f, t)


def write_csv(path: str | Path, A: np.ndarray) -> None:
    """Unscaled values, one frequency row per line, float32 round-trip precision."""
    np.savetxt(path, np.asarray(A, dtype=np.float32), fmt="%.9g", delimiter=",")


def read_csv(path: str | Path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", dtype=np.float32, ndmin=2)
