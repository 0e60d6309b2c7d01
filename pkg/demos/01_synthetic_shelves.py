"""
Synthetic shelf scenes
======================

Render shelf images whose empty gaps are known exactly, then write a small
dataset in the on-disk layout the other tools consume.
"""

import tempfile
from pathlib import Path

import numpy as np

from shelfpipe import ppm
from shelfpipe.synthgen import EMPTY_COLOR, SceneParams, generate, generate_dataset, row_bands

# A scene is a pure function of (params, index): same inputs, same bytes.
params = SceneParams(seed=7, empty_prob=0.3)
image, gt = generate(params, index=0)
print("image shape:", image.shape, "empty locations:", len(gt))
print("shelf row bands (top, bottom):", row_bands(params))

# Ground truth is stored normalized; convert to pixels for inspection.
for box in gt:
    px = box.to_bbox(params.img_w, params.img_h)
    print(f"  x={px.x:6.1f} y={px.y:6.1f} w={px.w:6.1f} h={px.h:6.1f}")

# Every gt pixel is painted with the empty color, nothing else is.
mask = np.all(image == EMPTY_COLOR, axis=-1)
print("empty-colored pixels:", int(mask.sum()))

# Regenerating gives byte-identical PPM output.
again, _ = generate(params, index=0)
assert ppm.encode(again) == ppm.encode(image)

# Write a dataset: manifest + YOLO-style label files + PPM images.
out = Path(tempfile.mkdtemp()) / "shelves"
ds = generate_dataset(params, 20, (16, 2, 2), out)
print("wrote", out / "dataset.json", ds.split_counts())
print("first label file:")
print((out / "labels" / f"{ds.images[0].id}.txt").read_text())
