"""Box primitives, IoU, greedy NMS and letterbox transforms.

Pixel boxes use a top-left origin with y growing downward and are stored as
``(x, y, w, h)`` floats.  Normalized boxes use the ``(cx, cy, w, h)`` layout of
the annotation files, as fractions of image width/height.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DEFAULT_IOU_THR = 0.45
DEFAULT_SCORE_THR = 0.25
DEFAULT_MAX_DETS = 100
PAD_VALUE = 114


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box coordinates: {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box width and height must be positive, got w={self.w} h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return (self.x2 - self.x) * (self.y2 - self.y)

    @classmethod
    def from_xyxy(cls, x1: float, y1: float, x2: float, y2: float) -> BBox:
        return cls(x1, y1, x2 - x1, y2 - y1)

    def scaled(self, k: float) -> BBox:
        return BBox(self.x * k, self.y * k, self.w * k, self.h * k)

    def clip(self, width: float, height: float) -> BBox | None:
        """Clip to ``[0, width] x [0, height]``; None if nothing is left."""
        x1 = min(max(self.x, 0.0), width)
        y1 = min(max(self.y, 0.0), height)
        x2 = min(max(self.x2, 0.0), width)
        y2 = min(max(self.y2, 0.0), height)
        if x2 <= x1 or y2 <= y1:
            return None
        return BBox.from_xyxy(x1, y1, x2, y2)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class NormBox:
    """Center-format box in fractions of the image size.

    Construction only checks finiteness and positive size; bounds are left to
    :meth:`in_bounds` so that out-of-bounds annotations can be loaded and
    reported by the dataset lints instead of aborting the load.
    """

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box coordinates: {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box width and height must be positive, got w={self.w} h={self.h}")

    def in_bounds(self, tol: float = 1e-9) -> bool:
        return (
            self.cx - self.w / 2 >= -tol
            and self.cx + self.w / 2 <= 1 + tol
            and self.cy - self.h / 2 >= -tol
            and self.cy + self.h / 2 <= 1 + tol
        )

    def to_bbox(self, width: float, height: float) -> BBox:
        w = self.w * width
        h = self.h * height
        return BBox(self.cx * width - w / 2, self.cy * height - h / 2, w, h)

    @classmethod
    def from_bbox(cls, box: BBox, width: float, height: float) -> NormBox:
        return cls(
            (box.x + box.w / 2) / width,
            (box.y + box.h / 2) / height,
            box.w / width,
            box.h / height,
        )


@dataclass(frozen=True)
class Detection:
    box: BBox
    score: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")

    def to_dict(self) -> dict:
        return {"x": self.box.x, "y": self.box.y, "w": self.box.w, "h": self.box.h, "score": self.score}

    @classmethod
    def from_dict(cls, d: dict) -> Detection:
        return cls(BBox(float(d["x"]), float(d["y"]), float(d["w"]), float(d["h"])), float(d["score"]))


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def iou_matrix(a: Sequence[BBox], b: Sequence[BBox]) -> np.ndarray:
    """Pairwise IoU, shape ``(len(a), len(b))``; same arithmetic as :func:`iou`."""
    out = np.zeros((len(a), len(b)))
    if not a or not b:
        return out
    A = np.array([(p.x, p.y, p.x2, p.y2) for p in a])
    B = np.array([(q.x, q.y, q.x2, q.y2) for q in b])
    iw = np.minimum(A[:, None, 2], B[None, :, 2]) - np.maximum(A[:, None, 0], B[None, :, 0])
    ih = np.minimum(A[:, None, 3], B[None, :, 3]) - np.maximum(A[:, None, 1], B[None, :, 1])
    hit = (iw > 0) & (ih > 0)
    inter = np.where(hit, iw * ih, 0.0)
    area_a = (A[:, 2] - A[:, 0]) * (A[:, 3] - A[:, 1])
    area_b = (B[:, 2] - B[:, 0]) * (B[:, 3] - B[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    np.divide(inter, union, out=out, where=hit)
    return np.minimum(out, 1.0)


def sort_by_score(dets: Iterable[Detection]) -> list[Detection]:
    """Descending score; equal scores keep their input order."""
    return sorted(dets, key=lambda d: -d.score)


def nms(
    cands: Sequence[Detection],
    iou_thr: float = DEFAULT_IOU_THR,
    score_thr: float = DEFAULT_SCORE_THR,
    max_dets: int = DEFAULT_MAX_DETS,
) -> list[Detection]:
    """Class-agnostic greedy non-maximum suppression."""
    if not (0.0 <= iou_thr <= 1.0 and 0.0 <= score_thr <= 1.0):
        raise ValueError("iou_thr and score_thr must lie in [0, 1]")
    if max_dets < 1:
        raise ValueError("max_dets must be >= 1")
    kept: list[Detection] = []
    for det in sort_by_score(d for d in cands if d.score >= score_thr):
        if all(iou(det.box, k.box) <= iou_thr for k in kept):
            kept.append(det)
            if len(kept) == max_dets:
                break
    return kept


@dataclass(frozen=True)
class LetterboxTransform:
    scale: float
    pad_x: int
    pad_y: int
    input_size: int
    img_w: int
    img_h: int
    new_w: int
    new_h: int

    def map_box(self, b: BBox) -> BBox:
        return BBox(b.x * self.scale + self.pad_x, b.y * self.scale + self.pad_y, b.w * self.scale, b.h * self.scale)

    def unmap_box(self, b: BBox) -> BBox:
        return unmap_box(self, b)

    def apply(self, image: np.ndarray) -> np.ndarray:
        """Nearest-neighbour resize of an ``HxWx3`` raster onto the padded square."""
        h, w = image.shape[:2]
        if (w, h) != (self.img_w, self.img_h):
            raise ValueError(f"image is {w}x{h}, transform expects {self.img_w}x{self.img_h}")
        new_w, new_h = self.new_w, self.new_h
        src_x = np.minimum(((np.arange(new_w) + 0.5) * w / new_w).astype(np.intp), w - 1)
        src_y = np.minimum(((np.arange(new_h) + 0.5) * h / new_h).astype(np.intp), h - 1)
        out = np.full((self.input_size, self.input_size, image.shape[2]), PAD_VALUE, dtype=image.dtype)
        out[self.pad_y : self.pad_y + new_h, self.pad_x : self.pad_x + new_w] = image[src_y[:, None], src_x[None, :]]
        return out


def letterbox(img_w: int, img_h: int, input_size: int) -> LetterboxTransform:
    if img_w <= 0 or img_h <= 0 or input_size <= 0:
        raise ValueError("image dimensions and input size must be positive")
    scale = min(input_size / img_w, input_size / img_h)
    new_w = max(1, round(img_w * scale))
    new_h = max(1, round(img_h * scale))
    # odd remainder lands on the right/bottom
    return LetterboxTransform(
        scale, (input_size - new_w) // 2, (input_size - new_h) // 2, input_size, img_w, img_h, new_w, new_h
    )


def unmap_box(t: LetterboxTransform, b: BBox) -> BBox:
    return BBox((b.x - t.pad_x) / t.scale, (b.y - t.pad_y) / t.scale, b.w / t.scale, b.h / t.scale)
