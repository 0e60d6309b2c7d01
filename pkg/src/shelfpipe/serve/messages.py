from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .. import ppm
from ..geometry import Detection

ENCODINGS = ("ppm_b64", "file_ref")


@dataclass(frozen=True)
class ImageMessage:
    image_id: str
    width: int
    height: int
    encoding: str
    payload: str
    ts_ms: int = 0

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "width": self.width,
            "height": self.height,
            "encoding": self.encoding,
            "payload": self.payload,
            "ts_ms": self.ts_ms,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> ImageMessage:
        enc = d["encoding"]
        if enc not in ENCODINGS:
            raise ValueError(f"unknown encoding {enc!r}")
        return cls(str(d["image_id"]), int(d["width"]), int(d["height"]), enc, str(d["payload"]), int(d.get("ts_ms", 0)))

    @classmethod
    def from_array(cls, image_id: str, image: np.ndarray, ts_ms: int | None = None) -> ImageMessage:
        h, w = image.shape[:2]
        ts = int(time.time() * 1000) if ts_ms is None else ts_ms
        return cls(image_id, w, h, "ppm_b64", ppm.to_b64(image), ts)

    @classmethod
    def from_file(cls, image_id: str, path: str, width: int, height: int, ts_ms: int = 0) -> ImageMessage:
        return cls(image_id, width, height, "file_ref", str(path), ts_ms)


@dataclass(frozen=True)
class DetectionMessage:
    image_id: str
    boxes: list[Detection] = field(default_factory=list)
    latency_ms: float = 0.0
    model: str = ""

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "boxes": [d.to_dict() for d in self.boxes],
            "latency_ms": self.latency_ms,
            "model": self.model,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> DetectionMessage:
        return cls(str(d["image_id"]), [Detection.from_dict(b) for b in d["boxes"]], float(d["latency_ms"]), str(d["model"]))
