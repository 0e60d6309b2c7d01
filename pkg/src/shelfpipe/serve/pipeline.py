"""Per-image detection path: decode -> letterbox -> infer -> NMS -> unmap.

The streaming service runs these same stage functions on separate threads, so
its output is identical to calling :func:`pipeline_process` directly.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .. import ppm
from ..detector import Executor, ExecutorError, InputImage
from ..geometry import DEFAULT_IOU_THR, DEFAULT_MAX_DETS, DEFAULT_SCORE_THR, Detection, letterbox, nms, unmap_box
from ..ppm import DecodeError
from .messages import DetectionMessage, ImageMessage


@dataclass(frozen=True)
class PipelineConfig:
    batch_size: int = 1
    batch_timeout_ms: float = 5.0
    decode_parallelism: int = 2
    score_thr: float = DEFAULT_SCORE_THR
    iou_thr: float = DEFAULT_IOU_THR
    max_dets: int = DEFAULT_MAX_DETS
    topic_in: str = "shelf.images"
    topic_out: str = "shelf.detections"
    topic_stats: str = "shelf.stats"
    stats_interval_s: float = 1.0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.decode_parallelism < 1:
            raise ValueError("decode_parallelism must be >= 1")
        if self.batch_timeout_ms < 0 or self.stats_interval_s <= 0:
            raise ValueError("timeouts must be non-negative and the stats interval positive")

    @classmethod
    def from_dict(cls, d: Mapping) -> PipelineConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> PipelineConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return asdict(self)


def decode_message(msg: ImageMessage) -> np.ndarray:
    try:
        if msg.encoding == "ppm_b64":
            image = ppm.from_b64(msg.payload)
        else:
            image = ppm.read(msg.payload)
    except DecodeError as exc:
        raise DecodeError(str(exc), msg.image_id) from None
    except OSError as exc:
        raise DecodeError(f"cannot read {msg.payload}: {exc}", msg.image_id) from None
    h, w = image.shape[:2]
    if (w, h) != (msg.width, msg.height):
        raise DecodeError(f"payload is {w}x{h}, message declares {msg.width}x{msg.height}", msg.image_id)
    return image


def prepare(image_id: str, image: np.ndarray, input_size: int) -> InputImage:
    t = letterbox(image.shape[1], image.shape[0], input_size)
    return InputImage(image_id, t.apply(image), t)


def postprocess(raw: Sequence[Detection], item: InputImage, cfg: PipelineConfig) -> list[Detection]:
    """NMS in input space, then map back to original pixels and clip to the image."""
    t = item.transform
    out = []
    for det in nms(raw, cfg.iou_thr, cfg.score_thr, cfg.max_dets):
        box = unmap_box(t, det.box).clip(t.img_w, t.img_h)
        if box is not None:
            out.append(Detection(box, det.score))
    return out


def run_executor(executor: Executor, batch: Sequence[InputImage]) -> list[list[Detection]]:
    out = executor.infer(batch)
    if len(out) != len(batch):
        raise ExecutorError(f"executor returned {len(out)} results for a batch of {len(batch)}")
    return out


def pipeline_process(msg: ImageMessage, executor: Executor, cfg: PipelineConfig | None = None) -> DetectionMessage:
    cfg = cfg or PipelineConfig()
    t0 = time.perf_counter()
    image = decode_message(msg)
    item = prepare(msg.image_id, image, executor.profile.input_size)
    raw = run_executor(executor, [item])[0]
    boxes = postprocess(raw, item, cfg)
    return DetectionMessage(msg.image_id, boxes, (time.perf_counter() - t0) * 1000.0, executor.profile.name)
