"""COCO-style single-class detection evaluation.

``evaluate`` reports mAP and mAR over IoU thresholds 0.50:0.05:0.95 with at
most ``max_dets`` detections per image and no area filtering, plus mAF, the
harmonic mean of the two.  Percent is the external unit; internal math works
in fractions.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .dataset import ImageRecord
from .geometry import DEFAULT_MAX_DETS, BBox, Detection, iou_matrix

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_STEPS = 100  # 101 sample points: 0.00, 0.01, ..., 1.00

PredictionSet = Mapping[str, Sequence[Detection]]
GroundTruth = Union[Mapping[str, Sequence[BBox]], Iterable[ImageRecord]]


class UnknownImageId(KeyError):
    def __init__(self, image_id: str):
        super().__init__(image_id)
        self.image_id = image_id

    def __str__(self) -> str:
        return f"prediction references unknown image id {self.image_id!r}"


class DuplicateKey(ValueError):
    def __init__(self, model: str, train_size: int):
        super().__init__(f"duplicate curve entry for model {model!r} at train_size {train_size}")
        self.model = model
        self.train_size = train_size


def as_gt_mapping(gts: GroundTruth) -> dict[str, list[BBox]]:
    if isinstance(gts, Mapping):
        return {k: list(v) for k, v in gts.items()}
    return {r.id: r.pixel_boxes() for r in gts}


def load_predictions(path: str | Path) -> dict[str, list[Detection]]:
    preds: dict[str, list[Detection]] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                preds.setdefault(str(obj["image_id"]), []).extend(Detection.from_dict(b) for b in obj["boxes"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{line_no}: bad prediction line: {exc}") from None
    return preds


def dump_predictions(preds: PredictionSet) -> str:
    return "".join(
        json.dumps({"image_id": k, "boxes": [d.to_dict() for d in preds[k]]}) + "\n" for k in sorted(preds)
    )


def save_predictions(path: str | Path, preds: PredictionSet) -> None:
    Path(path).write_text(dump_predictions(preds), encoding="utf-8")


@dataclass
class MatchResult:
    iou_thr: float
    # image_id -> [(detection index into the input list, matched gt index or None)], in score order
    pairs: dict[str, list[tuple[int, int | None]]] = field(default_factory=dict)
    scores: dict[str, list[float]] = field(default_factory=dict)
    n_gt: dict[str, int] = field(default_factory=dict)

    @property
    def total_gt(self) -> int:
        return sum(self.n_gt.values())

    @property
    def unmatched_gt(self) -> dict[str, int]:
        return {k: n - sum(1 for _, g in self.pairs[k] if g is not None) for k, n in self.n_gt.items()}


def _ranked(dets: Sequence[Detection], max_dets: int) -> list[int]:
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    return order[:max_dets]


def match(
    preds: PredictionSet, gts: GroundTruth, iou_thr: float, max_dets: int = DEFAULT_MAX_DETS
) -> MatchResult:
    """Greedy matching in descending score order.

    Each detection takes the still-unmatched gt box with the highest IoU
    (lowest index on ties), provided that IoU is at least ``iou_thr``.
    """
    gt_map = as_gt_mapping(gts)
    for k in preds:
        if k not in gt_map:
            raise UnknownImageId(k)
    res = MatchResult(iou_thr)
    for image_id in sorted(gt_map):
        gt_boxes = gt_map[image_id]
        dets = preds.get(image_id, ())
        order = _ranked(dets, max_dets)
        ious = iou_matrix([dets[i].box for i in order], gt_boxes)
        taken = np.zeros(len(gt_boxes), dtype=bool)
        pairs: list[tuple[int, int | None]] = []
        for row, di in enumerate(order):
            best, best_iou = None, iou_thr
            for g in range(len(gt_boxes)):
                if taken[g]:
                    continue
                v = ious[row, g]
                if v >= best_iou and (best is None or v > best_iou):
                    best, best_iou = g, v
            if best is not None:
                taken[best] = True
            pairs.append((di, best))
        res.pairs[image_id] = pairs
        res.scores[image_id] = [dets[i].score for i in order]
        res.n_gt[image_id] = len(gt_boxes)
    return res


def _pooled(m: MatchResult) -> tuple[np.ndarray, np.ndarray]:
    scores = np.array([s for k in sorted(m.pairs) for s in m.scores[k]], dtype=float)
    tp = np.array([g is not None for k in sorted(m.pairs) for _, g in m.pairs[k]], dtype=bool)
    order = np.argsort(-scores, kind="stable")
    return scores[order], tp[order]


def average_precision(m: MatchResult) -> float:
    """101-point interpolated AP over the pooled, score-ranked detections."""
    n_gt = m.total_gt
    if n_gt == 0:
        return 0.0
    _, tp = _pooled(m)
    if tp.size == 0:
        return 0.0
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(~tp)
    precision = tp_cum / (tp_cum + fp_cum)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    # recall >= i/100  <=>  100 * tp >= i * n_gt, exact in integers
    steps = np.arange(RECALL_STEPS + 1)
    first = np.searchsorted(RECALL_STEPS * tp_cum, steps * n_gt, side="left")
    sampled = np.where(first < tp.size, envelope[np.minimum(first, tp.size - 1)], 0.0)
    return float(sampled.sum() / (RECALL_STEPS + 1))


def recall(m: MatchResult) -> float:
    n_gt = m.total_gt
    if n_gt == 0:
        return 0.0
    return sum(1 for pairs in m.pairs.values() for _, g in pairs if g is not None) / n_gt


def maf(map_pct: float, mar_pct: float) -> float:
    """Harmonic mean of mAP and mAR (both in percent)."""
    if map_pct + mar_pct <= 0:
        return 0.0
    return 2.0 * map_pct * mar_pct / (map_pct + mar_pct)


@dataclass(frozen=True)
class EvalReport:
    map: float
    mar: float
    maf: float
    per_iou: dict[float, tuple[float, float]]
    max_dets: int
    n_images: int
    n_gt: int

    def to_dict(self) -> dict:
        return {
            "map": self.map,
            "mar": self.mar,
            "maf": self.maf,
            "per_iou": {f"{t:.2f}": {"ap": ap, "recall": r} for t, (ap, r) in self.per_iou.items()},
            "max_dets": self.max_dets,
            "n_images": self.n_images,
            "n_gt": self.n_gt,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: Mapping) -> EvalReport:
        per_iou = {float(t): (v["ap"], v["recall"]) for t, v in d.get("per_iou", {}).items()}
        return cls(d["map"], d["mar"], d["maf"], per_iou, d.get("max_dets", DEFAULT_MAX_DETS), d.get("n_images", 0), d.get("n_gt", 0))


def evaluate(
    preds: PredictionSet,
    gts: GroundTruth,
    thresholds: Sequence[float] = IOU_THRESHOLDS,
    max_dets: int = DEFAULT_MAX_DETS,
) -> EvalReport:
    gt_map = as_gt_mapping(gts)
    per_iou = {}
    for t in thresholds:
        m = match(preds, gt_map, t, max_dets)
        per_iou[t] = (average_precision(m), recall(m))
    map_pct = 100.0 * sum(ap for ap, _ in per_iou.values()) / len(per_iou)
    mar_pct = 100.0 * sum(r for _, r in per_iou.values()) / len(per_iou)
    return EvalReport(
        map=map_pct,
        mar=mar_pct,
        maf=maf(map_pct, mar_pct),
        per_iou=per_iou,
        max_dets=max_dets,
        n_images=len(gt_map),
        n_gt=sum(len(v) for v in gt_map.values()),
    )


@dataclass(frozen=True)
class CurvePoint:
    model: str
    train_size: int
    map: float
    mar: float
    maf: float

    def __post_init__(self) -> None:
        if self.train_size <= 0:
            raise ValueError("train_size must be positive")


CURVE_COLUMNS = ("model", "train_size", "map", "mar", "maf")


def curve_aggregate(reports: Iterable[tuple[int, str, EvalReport]]) -> list[CurvePoint]:
    """Learning-curve rows sorted by model, then ascending training-set size."""
    points: dict[tuple[str, int], CurvePoint] = {}
    for train_size, model, rep in reports:
        key = (model, int(train_size))
        if key in points:
            raise DuplicateKey(*key)
        points[key] = CurvePoint(model, int(train_size), rep.map, rep.mar, rep.maf)
    if not points:
        raise ValueError("curve_aggregate needs at least one report")
    return [points[k] for k in sorted(points)]


def curve_csv(points: Sequence[CurvePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for p in points:
        w.writerow([p.model, p.train_size, f"{p.map:.4f}", f"{p.mar:.4f}", f"{p.maf:.4f}"])
    return buf.getvalue()
