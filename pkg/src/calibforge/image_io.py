"""PFM depth and binary PPM color file I/O.

Depth goes to grayscale PFM ("Pf"): 32-bit floats in meters, rows stored
bottom-up per the format convention, little-endian signalled by a negative
scale. Color goes to binary PPM ("P6") with 8-bit channels.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_pfm(path, data: np.ndarray) -> None:
    """Write a (height, width) float array as little-endian grayscale PFM."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError(f"PFM writer expects a 2D array, got shape {data.shape}")
    height, width = data.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{width} {height}\n".encode("ascii"))
        f.write(b"-1.0\n")
        # PFM stores the bottom row first.
        f.write(np.flipud(data).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM file into a (height, width) float64 array."""
    with open(path, "rb") as f:
        magic = _read_token(f)
        if magic != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM file (magic {magic!r})")
        width = int(_read_token(f))
        height = int(_read_token(f))
        scale = float(_read_token(f))
        if width <= 0 or height <= 0:
            raise ValueError(f"{path}: invalid PFM dimensions {width}x{height}")
        dtype = "<f4" if scale < 0 else ">f4"
        raw = f.read(4 * width * height)
    if len(raw) != 4 * width * height:
        raise ValueError(f"{path}: truncated PFM payload")
    data = np.frombuffer(raw, dtype=dtype).reshape(height, width)
    return np.flipud(data).astype(np.float64)


def write_ppm(path, rgb: np.ndarray) -> None:
    """Write a (height, width, 3) uint8 array as binary PPM."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError(
            f"PPM writer expects (height, width, 3) uint8, got {rgb.shape} {rgb.dtype}"
        )
    height, width = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM file into a (height, width, 3) uint8 array."""
    with open(path, "rb") as f:
        magic = _read_token(f)
        if magic != b"P6":
            raise ValueError(f"{path}: not a binary PPM file (magic {magic!r})")
        width = int(_read_token(f))
        height = int(_read_token(f))
        maxval = int(_read_token(f))
        if maxval != 255:
            raise ValueError(f"{path}: only 8-bit PPM supported, maxval {maxval}")
        raw = f.read(3 * width * height)
    if len(raw) != 3 * width * height:
        raise ValueError(f"{path}: truncated PPM payload")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3).copy()


def _read_token(f) -> bytes:
    """Next whitespace-delimited header token, skipping '#' comment lines."""
    token = b""
    while True:
        c = f.read(1)
        if c == b"":
            raise ValueError("unexpected end of file in image header")
        if c == b"#":
            while c not in (b"\n", b""):
                c = f.read(1)
            continue
        if c.isspace():
            if token:
                return token
            continue
        token += c


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
