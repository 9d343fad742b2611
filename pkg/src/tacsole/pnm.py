"""Minimal binary PNM (P5/P6) reader and writer.

Color rasters are written as P6. Grayscale rasters are P5 with maxval 255
for uint8 input and maxval 65535 (big-endian samples) for uint16 input.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np


def write_pnm(path: str | os.PathLike, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    elif img.ndim == 2:
        magic = b"P5"
    else:
        raise ValueError(f"unsupported raster shape {img.shape}")
    if img.dtype == np.uint8:
        maxval, data = 255, img.tobytes()
    elif img.dtype == np.uint16:
        maxval, data = 65535, img.astype(">u2").tobytes()
    else:
        raise ValueError(f"unsupported dtype {img.dtype}; convert to uint8/uint16 first")
    h, w = img.shape[:2]
    header = magic + b"\n%d %d\n%d\n" % (w, h, maxval)
    Path(path).write_bytes(header + data)


def _tokens(buf: bytes, count: int) -> tuple[list[int], int]:
    out: list[int] = []
    pos = 0
    while len(out) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PNM header")
        out.append(int(buf[start:pos]))
    # exactly one whitespace byte separates maxval from the raster
    return out, pos + 1


def read_pnm(path: str | os.PathLike) -> np.ndarray:
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: not a binary PNM file")
    (w, h, maxval), pos = _tokens(buf[2:], 3)
    pos += 2
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    n = w * h * channels
    raw = np.frombuffer(buf, dtype=dtype, count=n, offset=pos)
    img = raw.reshape((h, w, 3) if channels == 3 else (h, w))
    return img.astype(np.uint8 if maxval < 256 else np.uint16)
