"""
Annotation lints and dataset statistics
=======================================

Check a dataset for broken boxes, then summarize how many empty locations
images hold and where they sit.
"""

import dataclasses
import tempfile
from pathlib import Path

from shelfpipe.dataset import Dataset, LintConfig, lint, stats
from shelfpipe.geometry import NormBox
from shelfpipe.synthgen import SceneParams, generate_dataset

root = Path(tempfile.mkdtemp())
ds = generate_dataset(SceneParams(seed=3), 200, (160, 20, 20), root / "ds", write_images=False)

report = lint(ds, LintConfig())
print("generated data:", len(report.errors()), "errors,", len(report.warnings()), "warnings")

# Break two images on purpose: a box hanging off the right edge and a pair
# of boxes separated by a sliver that an annotator probably meant to merge.
images = list(ds.images)
images[0] = dataclasses.replace(images[0], boxes=(NormBox(0.95, 0.5, 0.2, 0.1),))
images[1] = dataclasses.replace(images[1], boxes=(NormBox(0.30, 0.5, 0.1, 0.2), NormBox(0.401, 0.5, 0.1, 0.2)))
broken = Dataset(ds.name, tuple(images), ds.declared_splits, ds.root)
for f in lint(broken).findings:
    print(f"  {f.image_id} {f.rule_id} [{f.severity}] box {f.box_index}: {f.message}")

# Statistics: boxes-per-image histogram, sizes and centers.
s = stats(ds)
print("boxes per image:", dict(sorted(s.count_histogram.items())))
widths = [w for _, w, _ in s.size_points]
print(f"normalized width: min {min(widths):.3f} max {max(widths):.3f}")
# With three shelf rows the vertical centers fall on three values.
print("distinct center rows:", sorted({round(cy, 3) for _, _, cy in s.centers}))
s.write_csv(root / "stats")
print("CSV files:", sorted(p.name for p in (root / "stats").iterdir()))
