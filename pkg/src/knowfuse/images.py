"""8-bit PGM image storage and patch-grid extraction.

Pixels are held as floats in [0, 1]; files quantize to 8 bits, so a save/load
round trip is stable once values are multiples of 1/255.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .exceptions import DimensionError, FormatError


def write_pgm(path, image: np.ndarray) -> None:
    """Write a [0,1] float image as binary (P5) PGM."""
    if image.ndim != 2:
        raise DimensionError(f"expected a 2-D grayscale image, got shape {image.shape}")
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM and normalize to floats in [0, 1]."""
    data = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":  # comment line
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    pos += 1  # single whitespace after maxval
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return raw.reshape(h, w).astype(np.float64) / 255.0


def to_patch_grid(image: np.ndarray, patch_size: int) -> np.ndarray:
    """Cut an H×W image into non-overlapping P×P patches, flattened row-major.

    Returns an (N_v, P*P) matrix with patches ordered raster-style over the
    patch grid.
    """
    h, w = image.shape
    p = patch_size
    if h % p or w % p:
        raise DimensionError(f"image {h}x{w} not divisible by patch size {p}")
    rows, cols = h // p, w // p
    grid = image.reshape(rows, p, cols, p).transpose(0, 2, 1, 3).reshape(rows * cols, p * p)
    return np.ascontiguousarray(grid)


def from_patch_grid(patches: np.ndarray, image_hw: tuple[int, int], patch_size: int) -> np.ndarray:
    """Inverse of :func:`to_patch_grid`."""
    h, w = image_hw
    p = patch_size
    rows, cols = h // p, w // p
    if patches.shape != (rows * cols, p * p):
        raise DimensionError(f"patch grid shape {patches.shape} does not match {h}x{w}/{p}")
    return patches.reshape(rows, cols, p, p).transpose(0, 2, 1, 3).reshape(h, w)
