"""Binary PPM (P6, 8-bit RGB) encode/decode."""

from __future__ import annotations

import base64
import binascii
import re
from pathlib import Path

import numpy as np


class DecodeError(ValueError):
    def __init__(self, message: str, image_id: str | None = None):
        super().__init__(message if image_id is None else f"{image_id}: {message}")
        self.image_id = image_id


_HEADER = re.compile(rb"P6\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s")


def encode(image: np.ndarray) -> bytes:
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError("expected an HxWx3 uint8 array")
    h, w = image.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(image).tobytes()


def decode(data: bytes) -> np.ndarray:
    m = _HEADER.match(data)
    if m is None:
        raise DecodeError("not a binary PPM (P6) stream")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise DecodeError(f"unsupported maxval {maxval}")
    if w <= 0 or h <= 0:
        raise DecodeError(f"bad dimensions {w}x{h}")
    body = data[m.end() :]
    if len(body) != w * h * 3:
        raise DecodeError(f"expected {w * h * 3} pixel bytes, got {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def read(path: str | Path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def write(path: str | Path, image: np.ndarray) -> None:
    Path(path).write_bytes(encode(image))


def to_b64(image: np.ndarray) -> str:
    return base64.b64encode(encode(image)).decode("ascii")


def from_b64(payload: str) -> np.ndarray:
    try:
        raw = base64.b64decode(payload, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise DecodeError(f"invalid base64 payload: {exc}") from None
    return decode(raw)
