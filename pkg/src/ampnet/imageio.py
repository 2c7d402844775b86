"""8-bit PGM (P5) / PPM (P6) reading and writing.

Grayscale images come back as ``[H, W]`` uint8 arrays, color images as
``[3, H, W]``. PNG files are decoded with Pillow when it is installed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError

IMAGE_SUFFIXES = (".pgm", ".ppm", ".png")


def _tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated header integers, skipping comments."""
    values, pos = [], 2
    while len(values) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise DataError("malformed PNM header")
        values.append(int(data[start:pos]))
    return values, pos + 1  # exactly one whitespace byte precedes the raster


def decode_pnm(data: bytes) -> np.ndarray:
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise DataError(f"unsupported PNM magic {magic!r}; only binary P5/P6 are read")
    (width, height, maxval), offset = _tokens(data, 3)
    if maxval != 255:
        raise DataError(f"only 8-bit PNM (maxval 255) is supported, got maxval {maxval}")
    channels = 1 if magic == b"P5" else 3
    n = width * height * channels
    if len(data) - offset < n:
        raise DataError(f"truncated PNM raster: need {n} bytes, have {len(data) - offset}")
    raster = np.frombuffer(data, dtype=np.uint8, count=n, offset=offset)
    if channels == 1:
        return raster.reshape(height, width).copy()
    return raster.reshape(height, width, 3).transpose(2, 0, 1).copy()


def encode_pnm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    if img.ndim == 2:
        h, w = img.shape
        return b"P5\n%d %d\n255\n" % (w, h) + img.tobytes()
    if img.ndim == 3 and img.shape[0] == 3:
        _, h, w = img.shape
        return b"P6\n%d %d\n255\n" % (w, h) + img.transpose(1, 2, 0).tobytes()
    raise DataError(f"cannot encode array of shape {img.shape} as PGM/PPM")


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError as exc:  # pragma: no cover
            raise DataError("reading PNG needs Pillow (pip install ampnet[png])") from exc
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L" if im.mode in ("L", "I", "1") else "RGB"))
        return arr.copy() if arr.ndim == 2 else arr.transpose(2, 0, 1).copy()
    try:
        return decode_pnm(path.read_bytes())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def write_image(path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_pnm(img))


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"image directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
