"""Deterministic synthetic shelf scenes with ground-truth empty locations.

A scene is a front-parallel shelf: ``rows`` horizontal bands, each ending in a
shelf board, divided into ``slots_per_row`` equal slots.  A slot is either a
product (a colored block on a backdrop) or empty, rendered in ``empty_color``
over the full slot area.  Runs of adjacent empty slots form one ground-truth
box, so every box spans its row's full usable height.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ppm
from .dataset import Dataset, ImageRecord, load_dataset, save_dataset
from .geometry import NormBox

EMPTY_COLOR = (24, 24, 28)
BOARD_COLOR = (150, 110, 60)
BACKDROP_COLOR = (210, 210, 205)
DEFAULT_PALETTE = (
    (200, 40, 40),
    (40, 150, 60),
    (40, 80, 190),
    (230, 190, 40),
    (240, 240, 240),
    (170, 60, 170),
    (60, 180, 190),
    (240, 130, 40),
)


class InvalidParams(ValueError):
    pass


@dataclass(frozen=True)
class SceneParams:
    img_w: int = 320
    img_h: int = 240
    rows: int = 3
    slots_per_row: int = 8
    empty_prob: float = 0.2
    product_w_range: tuple[int, int] = (30, 40)
    palette: tuple[tuple[int, int, int], ...] = DEFAULT_PALETTE
    seed: int = 0
    # caps the width of any merged empty run (as a fraction of img_w); None = no cap
    max_empty_frac: float | None = None
    board_px: int | None = None
    empty_color: tuple[int, int, int] = EMPTY_COLOR

    def validate(self) -> None:
        if self.img_w <= 0 or self.img_h <= 0:
            raise InvalidParams("image dimensions must be positive")
        if self.rows < 1 or self.slots_per_row < 1:
            raise InvalidParams("rows and slots_per_row must be >= 1")
        if self.slots_per_row > self.img_w or self.rows * 2 > self.img_h:
            raise InvalidParams("too many rows/slots for the image size")
        if not 0.0 <= self.empty_prob <= 1.0:
            raise InvalidParams("empty_prob must lie in [0, 1]")
        lo, hi = self.product_w_range
        if not 1 <= lo <= hi:
            raise InvalidParams("product_w_range must satisfy 1 <= lo <= hi")
        if not self.palette:
            raise InvalidParams("palette must not be empty")
        reserved = {tuple(self.empty_color), BOARD_COLOR, BACKDROP_COLOR}
        if any(tuple(c) in reserved for c in self.palette):
            raise InvalidParams("palette colors must differ from the empty, board and backdrop colors")
        if not 0 <= self.seed < 2**64:
            raise InvalidParams("seed must be an unsigned 64-bit integer")
        if self.max_empty_frac is not None:
            if not 0 < self.max_empty_frac <= 1:
                raise InvalidParams("max_empty_frac must lie in (0, 1]")
            if max(slot_width_px(self)) / self.img_w >= self.max_empty_frac:
                raise InvalidParams("a single slot is already wider than max_empty_frac")
            if max(usable_height_px(self)) / self.img_h >= self.max_empty_frac:
                raise InvalidParams("row height is not below max_empty_frac; increase rows")


def _edges(total: int, parts: int) -> list[int]:
    return [round(k * total / parts) for k in range(parts + 1)]


def row_bands(p: SceneParams) -> list[tuple[int, int]]:
    """Usable (top, bottom) pixel span of each row, excluding the shelf board."""
    ys = _edges(p.img_h, p.rows)
    board = _board_px(p)
    return [(ys[k], ys[k + 1] - board) for k in range(p.rows)]


def _board_px(p: SceneParams) -> int:
    if p.board_px is not None:
        return p.board_px
    return max(1, (p.img_h // p.rows) // 12)


def slot_width_px(p: SceneParams) -> list[int]:
    xs = _edges(p.img_w, p.slots_per_row)
    return [b - a for a, b in zip(xs, xs[1:])]


def usable_height_px(p: SceneParams) -> list[int]:
    return [b - a for a, b in row_bands(p)]


@dataclass
class Scene:
    params: SceneParams
    # slots[row][col] is None for empty, else (color, product_width_px)
    slots: list[list[tuple[tuple[int, int, int], int] | None]] = field(default_factory=list)

    def empty_runs(self) -> list[tuple[int, int, int]]:
        """(row, first_col, last_col_exclusive) for each maximal run of empty slots."""
        runs = []
        for r, row in enumerate(self.slots):
            c = 0
            while c < len(row):
                if row[c] is None:
                    start = c
                    while c < len(row) and row[c] is None:
                        c += 1
                    runs.append((r, start, c))
                else:
                    c += 1
        return runs

    def gt_pixel_boxes(self) -> list[tuple[int, int, int, int]]:
        p = self.params
        xs = _edges(p.img_w, p.slots_per_row)
        bands = row_bands(p)
        return [(xs[a], bands[r][0], xs[b], bands[r][1]) for r, a, b in self.empty_runs()]

    def gt_boxes(self) -> list[NormBox]:
        p = self.params
        return [
            NormBox((x1 + x2) / 2 / p.img_w, (y1 + y2) / 2 / p.img_h, (x2 - x1) / p.img_w, (y2 - y1) / p.img_h)
            for x1, y1, x2, y2 in self.gt_pixel_boxes()
        ]

    def render(self) -> np.ndarray:
        p = self.params
        img = np.empty((p.img_h, p.img_w, 3), dtype=np.uint8)
        img[:] = BACKDROP_COLOR
        xs = _edges(p.img_w, p.slots_per_row)
        ys = _edges(p.img_h, p.rows)
        for r, (top, bottom) in enumerate(row_bands(p)):
            img[bottom : ys[r + 1]] = BOARD_COLOR
            for c, slot in enumerate(self.slots[r]):
                x1, x2 = xs[c], xs[c + 1]
                if slot is None:
                    img[top:bottom, x1:x2] = p.empty_color
                    continue
                color, pw = slot
                pw = min(pw, x2 - x1)
                off = x1 + (x2 - x1 - pw) // 2
                # products leave a small headroom so rows stay visually separated
                ptop = top + max(1, (bottom - top) // 10)
                img[ptop:bottom, off : off + pw] = color
        return img


def rng_for(seed: int, index: int = 0) -> np.random.Generator:
    """PCG64 substream for one image: ``seed XOR index``."""
    return np.random.Generator(np.random.PCG64((seed ^ index) & (2**64 - 1)))


def build_scene(p: SceneParams, rng: np.random.Generator) -> Scene:
    p.validate()
    widths = slot_width_px(p)
    max_run_px = math.inf if p.max_empty_frac is None else p.max_empty_frac * p.img_w
    lo, hi = p.product_w_range
    scene = Scene(p)
    for _ in range(p.rows):
        row: list[tuple[tuple[int, int, int], int] | None] = []
        run_px = 0
        for c in range(p.slots_per_row):
            empty = rng.random() < p.empty_prob
            color = p.palette[int(rng.integers(len(p.palette)))]
            pw = int(rng.integers(lo, hi + 1))
            if empty and run_px + widths[c] >= max_run_px:
                empty = False
            if empty:
                row.append(None)
                run_px += widths[c]
            else:
                row.append((color, pw))
                run_px = 0
        scene.slots.append(row)
    return scene


def generate(p: SceneParams, index: int = 0) -> tuple[np.ndarray, list[NormBox]]:
    """Render one scene; output is a pure function of ``(p, index)``."""
    scene = build_scene(p, rng_for(p.seed, index))
    return scene.render(), scene.gt_boxes()


def generate_dataset(
    p: SceneParams,
    n_images: int,
    splits: tuple[int, int, int],
    out_dir: str | Path,
    name: str = "synthetic-shelves",
    write_images: bool = True,
) -> Dataset:
    """Write manifest, labels and PPM images; images are split train/val/test in order."""
    if len(splits) != 3 or any(s < 0 for s in splits) or sum(splits) != n_images:
        raise InvalidParams(f"split counts {splits} must be non-negative and sum to {n_images}")
    p.validate()
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    split_names = ["train"] * splits[0] + ["val"] * splits[1] + ["test"] * splits[2]
    width = max(4, len(str(n_images - 1)))
    records = []
    for i, split in enumerate(split_names):
        image_id = f"img_{i:0{width}d}"
        rel = f"images/{image_id}.ppm"
        image, gt = generate(p, i)
        if write_images:
            ppm.write(out_dir / rel, image)
        records.append(ImageRecord(image_id, rel, p.img_w, p.img_h, split, tuple(gt)))
    declared = dict(zip(("train", "val", "test"), splits))
    manifest = save_dataset(Dataset(name, tuple(records), declared, out_dir), out_dir)
    # reload so in-memory boxes carry the same 6-decimal rounding as the label files
    return load_dataset(manifest)
