"""Binary PPM/PGM reading and writing, with atomic file replacement."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np


def to_bytes(image: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and scale to 8-bit."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def from_bytes(data: np.ndarray) -> np.ndarray:
    return data.astype(np.float64) / 255.0


def quantize(image: np.ndarray) -> np.ndarray:
    """What an image looks like after a round trip through an 8-bit file."""
    return from_bytes(to_bytes(image))


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_pnm(image: np.ndarray) -> bytes:
    """P6 for 3-channel images, P5 for single-channel or 2-D ones."""
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[:, :, 0]
    data = image if image.dtype == np.uint8 else to_bytes(image)
    if data.ndim == 2:
        magic = b"P5"
    elif data.ndim == 3 and data.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot encode image of shape {image.shape} as PNM")
    h, w = data.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(data).tobytes()


def write_ppm(path, image: np.ndarray) -> None:
    atomic_write(path, encode_pnm(image))


def write_pgm(path, mask: np.ndarray) -> None:
    """Boolean or [0, 1] mask as an 8-bit greyscale file."""
    data = (mask.astype(np.uint8) * 255) if mask.dtype == bool else to_bytes(mask)
    atomic_write(path, encode_pnm(data))


def _tokens(buf: bytes, count: int, pos: int):
    out = []
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
        out.append(buf[start:pos])
    return out, pos + 1


def decode_pnm(buf: bytes) -> np.ndarray:
    """Decode binary P5/P6 into floats in [0, 1], always H x W x C."""
    (magic, w, h, maxval), pos = _tokens(buf, 4, 0)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"unsupported PNM type {magic!r}")
    w, h, maxval = int(w), int(h), int(maxval)
    channels = 3 if magic == b"P6" else 1
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    count = w * h * channels
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    return data.reshape(h, w, channels).astype(np.float64) / maxval


def read_pnm(path) -> np.ndarray:
    return decode_pnm(Path(path).read_bytes())
