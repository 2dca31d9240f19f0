"""Versioned binary container for trained parameters.

Layout: 5-byte magic, little-endian header, then row-major float64 arrays in
fixed order. ``PLEX1`` stores the Siamese transform (W1, b1, W2, b2 after a
(d, h1, h2, dropout) header); ``HEAD1`` stores the classifier head (W, b
after a (classes, d) header).
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataFormatError

SIAMESE_MAGIC = b"PLEX1"
HEAD_MAGIC = b"HEAD1"


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataFormatError(f"truncated parameter file while reading {what}")
    return buf


def _read_array(fh, shape: tuple[int, ...], what: str) -> np.ndarray:
    n = int(np.prod(shape))
    raw = _read_exact(fh, n * 8, what)
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def _check_eof(fh, path) -> None:
    if fh.read(1):
        raise DataFormatError(f"trailing bytes after parameter data in {path}")


def write_siamese(path, d: int, h1: int, h2: int, dropout: float,
                  w1: np.ndarray, b1: np.ndarray, w2: np.ndarray, b2: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(SIAMESE_MAGIC)
        fh.write(struct.pack("<IIId", d, h1, h2, dropout))
        for arr in (w1, b1, w2, b2):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_siamese(path):
    """Returns (d, h1, h2, dropout, w1, b1, w2, b2)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 5, "magic")
        if magic != SIAMESE_MAGIC:
            raise DataFormatError(
                f"{path}: bad magic {magic!r}, expected {SIAMESE_MAGIC!r} (wrong file or unsupported version)"
            )
        d, h1, h2, dropout = struct.unpack("<IIId", _read_exact(fh, 20, "header"))
        w1 = _read_array(fh, (d, h1), "W1")
        b1 = _read_array(fh, (h1,), "b1")
        w2 = _read_array(fh, (h1, h2), "W2")
        b2 = _read_array(fh, (h2,), "b2")
        _check_eof(fh, path)
    return d, h1, h2, dropout, w1, b1, w2, b2


def write_head(path, weight: np.ndarray, bias: np.ndarray) -> None:
    classes, d = weight.shape
    with open(path, "wb") as fh:
        fh.write(HEAD_MAGIC)
        fh.write(struct.pack("<II", classes, d))
        fh.write(np.ascontiguousarray(weight, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(bias, dtype="<f8").tobytes())


def read_head(path):
    """Returns (weight, bias)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 5, "magic")
        if magic != HEAD_MAGIC:
            raise DataFormatError(
                f"{path}: bad magic {magic!r}, expected {HEAD_MAGIC!r} (wrong file or unsupported version)"
            )
        classes, d = struct.unpack("<II", _read_exact(fh, 8, "header"))
        weight = _read_array(fh, (classes, d), "weight")
        bias = _read_array(fh, (classes,), "bias")
        _check_eof(fh, path)
    return weight, bias
