"""Dataset manifest + annotation files, annotation lints and box statistics.

On-disk layout, relative to the manifest directory::

    dataset.json          {"name", "declared_splits"?, "images": [{id, file, width, height, split}]}
    labels/<id>.txt       one line per box: ``0 cx cy w h`` with 6 decimals
    images/<id>.ppm       raster (optional for everything except color detection)
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .geometry import BBox, NormBox, iou

SPLITS = ("train", "val", "test")
REFERENCE_SPLITS = {"train": 800, "val": 100, "test": 100}
CLASS_ID = 0
LABEL_DIR = "labels"


class DatasetError(Exception):
    pass


class MissingFile(DatasetError):
    def __init__(self, path: Path | str):
        super().__init__(f"missing file: {path}")
        self.path = Path(path)


class MalformedLine(DatasetError):
    def __init__(self, file: Path | str, line_no: int, reason: str):
        super().__init__(f"{file}:{line_no}: {reason}")
        self.file = Path(file)
        self.line_no = line_no


class DuplicateImageId(DatasetError):
    def __init__(self, image_id: str):
        super().__init__(f"duplicate image id: {image_id}")
        self.image_id = image_id


@dataclass(frozen=True)
class ImageRecord:
    id: str
    file: str
    width: int
    height: int
    split: str
    boxes: tuple[NormBox, ...] = ()

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"{self.id}: width and height must be positive")
        if self.split not in SPLITS:
            raise ValueError(f"{self.id}: unknown split {self.split!r}")
        object.__setattr__(self, "boxes", tuple(self.boxes))

    def pixel_boxes(self) -> list[BBox]:
        return [b.to_bbox(self.width, self.height) for b in self.boxes]


@dataclass(frozen=True)
class Dataset:
    name: str
    images: tuple[ImageRecord, ...] = ()
    declared_splits: Mapping[str, int] | None = None
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "images", tuple(self.images))
        seen = set()
        for rec in self.images:
            if rec.id in seen:
                raise DuplicateImageId(rec.id)
            seen.add(rec.id)

    def split(self, name: str) -> list[ImageRecord]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [r for r in self.images if r.split == name]

    def split_counts(self) -> dict[str, int]:
        c = Counter(r.split for r in self.images)
        return {s: c.get(s, 0) for s in SPLITS}

    def by_id(self) -> dict[str, ImageRecord]:
        return {r.id: r for r in self.images}

    def image_path(self, rec: ImageRecord) -> Path:
        return (self.root or Path(".")) / rec.file


# -- annotation text format ---------------------------------------------------


def format_label_line(b: NormBox) -> str:
    return f"{CLASS_ID} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}\n"


def parse_label_file(path: Path) -> list[NormBox]:
    if not path.is_file():
        raise MissingFile(path)
    boxes = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if len(parts) != 5:
                raise MalformedLine(path, line_no, f"expected 5 fields, got {len(parts)}")
            if parts[0] != str(CLASS_ID):
                raise MalformedLine(path, line_no, f"unknown class id {parts[0]!r}")
            try:
                boxes.append(NormBox(*(float(p) for p in parts[1:])))
            except ValueError as exc:
                raise MalformedLine(path, line_no, str(exc)) from None
    return boxes


def load_dataset(manifest_path: str | Path) -> Dataset:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingFile(manifest_path)
    root = manifest_path.parent
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
        entries = doc["images"]
        name = str(doc["name"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise MalformedLine(manifest_path, 0, f"bad manifest: {exc}") from None
    records = []
    for i, e in enumerate(entries):
        try:
            image_id = str(e["id"])
            rec = ImageRecord(
                id=image_id,
                file=str(e["file"]),
                width=int(e["width"]),
                height=int(e["height"]),
                split=str(e["split"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedLine(manifest_path, 0, f"bad image entry #{i}: {exc}") from None
        boxes = parse_label_file(root / LABEL_DIR / f"{image_id}.txt")
        records.append(ImageRecord(rec.id, rec.file, rec.width, rec.height, rec.split, tuple(boxes)))
    declared = doc.get("declared_splits")
    return Dataset(name, tuple(records), dict(declared) if declared else None, root)


def manifest_dict(d: Dataset) -> dict:
    doc: dict = {"name": d.name}
    if d.declared_splits:
        doc["declared_splits"] = {s: int(d.declared_splits[s]) for s in SPLITS if s in d.declared_splits}
    doc["images"] = [
        {"id": r.id, "file": r.file, "width": r.width, "height": r.height, "split": r.split} for r in d.images
    ]
    return doc


def save_dataset(d: Dataset, root: str | Path) -> Path:
    """Write manifest and label files in canonical form; returns the manifest path."""
    root = Path(root)
    (root / LABEL_DIR).mkdir(parents=True, exist_ok=True)
    for r in d.images:
        (root / LABEL_DIR / f"{r.id}.txt").write_text("".join(format_label_line(b) for b in r.boxes), encoding="utf-8")
    manifest = root / "dataset.json"
    manifest.write_text(json.dumps(manifest_dict(d), indent=2) + "\n", encoding="utf-8")
    return manifest


# -- lints ----------------------------------------------------------------------


@dataclass(frozen=True)
class LintConfig:
    min_px: float = 2.0
    merge_gap_frac: float = 0.25
    merge_vertical_overlap: float = 0.5
    dup_iou: float = 0.9
    max_count: int = 15
    bounds_tol: float = 1e-9
    reference_splits: Mapping[str, int] | None = None


@dataclass(frozen=True, order=True)
class Finding:
    image_id: str
    rule_id: str
    box_index: int
    severity: str
    message: str

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "rule_id": self.rule_id,
            "box_index": self.box_index,
            "severity": self.severity,
            "message": self.message,
        }


@dataclass(frozen=True)
class LintReport:
    findings: tuple[Finding, ...]

    def errors(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "error"]

    def warnings(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "warning"]

    def count(self, rule_id: str) -> int:
        return sum(1 for f in self.findings if f.rule_id == rule_id)

    def to_json(self) -> str:
        return json.dumps(
            {
                "errors": len(self.errors()),
                "warnings": len(self.warnings()),
                "findings": [f.to_dict() for f in self.findings],
            },
            indent=2,
        )


def _interval_overlap(a0: float, a1: float, b0: float, b1: float) -> float:
    return max(0.0, min(a1, b1) - max(a0, b0))


def _lint_image(rec: ImageRecord, cfg: LintConfig) -> Iterable[Finding]:
    boxes = rec.boxes
    for i, b in enumerate(boxes):
        if not b.in_bounds(cfg.bounds_tol):
            yield Finding(rec.id, "L1", i, "error", f"box {i} extends outside the image")
        if b.w * rec.width < cfg.min_px or b.h * rec.height < cfg.min_px:
            yield Finding(
                rec.id, "L2", i, "error",
                f"box {i} is {b.w * rec.width:.2f}x{b.h * rec.height:.2f} px, below {cfg.min_px} px",
            )
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            a, b = boxes[i], boxes[j]
            # same-axis scaling preserves IoU, so normalized coords are fine
            pair_iou = iou(BBox(a.cx - a.w / 2, a.cy - a.h / 2, a.w, a.h), BBox(b.cx - b.w / 2, b.cy - b.h / 2, b.w, b.h))
            if pair_iou > cfg.dup_iou:
                yield Finding(rec.id, "L4", i, "error", f"boxes {i} and {j} are near-duplicates (IoU {pair_iou:.3f})")
                continue
            v = _interval_overlap(a.cy - a.h / 2, a.cy + a.h / 2, b.cy - b.h / 2, b.cy + b.h / 2)
            if v <= cfg.merge_vertical_overlap * min(a.h, b.h):
                continue
            left, right = (a, b) if a.cx <= b.cx else (b, a)
            gap = (right.cx - right.w / 2) - (left.cx + left.w / 2)
            if gap < cfg.merge_gap_frac * min(a.w, b.w):
                yield Finding(
                    rec.id, "L3", i, "warning",
                    f"boxes {i} and {j} share a row with gap {gap:.6f}; a continuous empty location takes one box",
                )
    if len(boxes) > cfg.max_count:
        yield Finding(rec.id, "L5", -1, "warning", f"{len(boxes)} boxes exceeds the expected maximum of {cfg.max_count}")


def lint(d: Dataset, cfg: LintConfig | None = None) -> LintReport:
    cfg = cfg or LintConfig()
    findings: list[Finding] = []
    for rec in d.images:
        findings.extend(_lint_image(rec, cfg))
    reference = cfg.reference_splits if cfg.reference_splits is not None else d.declared_splits
    if reference:
        actual = d.split_counts()
        for s in SPLITS:
            if s in reference and actual[s] != reference[s]:
                findings.append(
                    Finding("", "L6", -1, "warning", f"split {s} has {actual[s]} images, reference is {reference[s]}")
                )
    return LintReport(tuple(sorted(findings)))


# -- statistics -------------------------------------------------------------------


@dataclass(frozen=True)
class StatsReport:
    count_histogram: dict[int, int]
    size_points: list[tuple[str, float, float]]
    centers: list[tuple[str, float, float]]

    def write_csv(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "counts.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["count", "images"])
            w.writerows(sorted(self.count_histogram.items()))
        for name, cols, rows in (
            ("sizes.csv", ["image_id", "w", "h"], self.size_points),
            ("centers.csv", ["image_id", "cx", "cy"], self.centers),
        ):
            with open(out_dir / name, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(cols)
                w.writerows((i, repr(a), repr(b)) for i, a, b in rows)

    @classmethod
    def read_csv(cls, out_dir: str | Path) -> StatsReport:
        out_dir = Path(out_dir)

        def rows(name: str) -> list[list[str]]:
            with open(out_dir / name, newline="") as fh:
                return list(csv.reader(fh))[1:]

        hist = {int(c): int(n) for c, n in rows("counts.csv")}
        sizes = [(i, float(a), float(b)) for i, a, b in rows("sizes.csv")]
        centers = [(i, float(a), float(b)) for i, a, b in rows("centers.csv")]
        return cls(hist, sizes, centers)


def stats(d: Dataset) -> StatsReport:
    hist: Counter[int] = Counter(len(r.boxes) for r in d.images)
    sizes = [(r.id, b.w, b.h) for r in d.images for b in r.boxes]
    centers = [(r.id, b.cx, b.cy) for r in d.images for b in r.boxes]
    return StatsReport(dict(sorted(hist.items())), sizes, centers)
