"""Binary netpbm readers and writers (PPM P6 for images, PGM P5 for labels).

Only maxval 255 is supported; everything round-trips bit-exactly for 8-bit
integer data, and float inputs are rounded to nearest on write.  These two
formats are the package's only image interchange: trivially portable and
codec-free.
"""

from __future__ import annotations

import os
from typing import Tuple

import numpy as np

__all__ = ["NetpbmError", "read_ppm", "write_ppm", "read_pgm", "write_pgm"]


class NetpbmError(ValueError):
    """Malformed netpbm file; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _parse_header(data: bytes, magic: bytes, path: str) -> Tuple[int, int, int]:
    """Parse '<magic> <width> <height> <maxval><ws>'; returns (w, h, payload offset).

    Netpbm allows any whitespace between header tokens and '#' comments that
    run to end of line; exactly one whitespace byte separates maxval from
    the payload.
    """
    if data[:2] != magic:
        raise NetpbmError(
            f"{path}: expected magic {magic.decode()}, got {data[:2]!r}", 0)
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise NetpbmError(f"{path}: bad header token {token!r}", start)
        fields.append(int(token))
    if pos >= len(data):
        raise NetpbmError(f"{path}: truncated header", pos)
    pos += 1  # the single whitespace byte after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise NetpbmError(f"{path}: unsupported maxval {maxval} (only 255)", pos)
    if width <= 0 or height <= 0:
        raise NetpbmError(f"{path}: bad dimensions {width}x{height}", 2)
    return width, height, pos


def _read_payload(path: str, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    width, height, pos = _parse_header(data, magic, path)
    need = width * height * channels
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise NetpbmError(
            f"{path}: payload has {len(payload)} bytes, needs {need}",
            pos + len(payload))
    arr = np.frombuffer(payload, np.uint8)
    if channels == 1:
        return arr.reshape(height, width)
    return arr.reshape(height, width, channels)


def read_ppm(path: str) -> np.ndarray:
    """Read a binary P6 image as float32 (3, H, W) with values in [0, 255]."""
    hwc = _read_payload(path, b"P6", 3)
    return hwc.transpose(2, 0, 1).astype(np.float32)


def read_pgm(path: str) -> np.ndarray:
    """Read a binary P5 map as int64 (H, W) with values in [0, 255]."""
    return _read_payload(path, b"P5", 1).astype(np.int64)


def _quantize(values: np.ndarray) -> np.ndarray:
    q = np.rint(np.asarray(values, np.float64))
    if q.min() < 0 or q.max() > 255:
        raise ValueError(
            f"netpbm write: values outside [0, 255] after rounding "
            f"(range [{q.min()}, {q.max()}])")
    return q.astype(np.uint8)


def write_ppm(path: str, image: np.ndarray) -> None:
    """Write a (3, H, W) array as binary P6; floats are rounded to nearest."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"write_ppm: expected (3, H, W), got {image.shape}")
    body = _quantize(image).transpose(1, 2, 0).tobytes()
    _write(path, b"P6", image.shape[2], image.shape[1], body)


def write_pgm(path: str, labels: np.ndarray) -> None:
    """Write an (H, W) array as binary P5; floats are rounded to nearest."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"write_pgm: expected (H, W), got {labels.shape}")
    _write(path, b"P5", labels.shape[1], labels.shape[0], _quantize(labels).tobytes())


def _write(path: str, magic: bytes, width: int, height: int, body: bytes) -> None:
    header = b"%s\n%d %d\n255\n" % (magic, width, height)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(header + body)
    os.replace(tmp, path)
