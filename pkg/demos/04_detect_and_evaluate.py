"""
Reference detectors and COCO-style evaluation
=============================================

No trained model here: an oracle that replays (noisy) ground truth and a
color-threshold detector stand in for one.  The evaluation is the same one
applied to real model outputs.
"""

import tempfile
from pathlib import Path

from shelfpipe import ppm
from shelfpipe.detector import ColorExecutor, ExecutorProfile, InputImage, NoiseParams, OracleExecutor
from shelfpipe.evaluation import curve_aggregate, curve_csv, evaluate, maf
from shelfpipe.geometry import letterbox
from shelfpipe.serve.pipeline import PipelineConfig, postprocess
from shelfpipe.synthgen import EMPTY_COLOR, SceneParams, generate_dataset

root = Path(tempfile.mkdtemp())
ds = generate_dataset(SceneParams(seed=5, empty_prob=0.3), 60, (40, 10, 10), root / "ds")
test = ds.split("test")


def predict(executor, records):
    cfg = PipelineConfig()
    preds = {}
    for r in records:
        img = ppm.read(ds.image_path(r))
        t = letterbox(r.width, r.height, executor.profile.input_size)
        item = InputImage(r.id, t.apply(img), t)
        preds[r.id] = postprocess(executor.infer([item])[0], item, cfg)
    return preds


perfect = OracleExecutor.from_records(test, input_size=320)
print("zero-noise oracle:", evaluate(predict(perfect, test), test).to_dict()["maf"])

color = ColorExecutor(EMPTY_COLOR, profile=ExecutorProfile("color", input_size=320))
print("color threshold  :", round(evaluate(predict(color, test), test).maf, 2))

# Stand-in learning curve: pretend more training images means less box jitter.
entries = []
for train_size, sigma in ((100, 6.0), (400, 2.0), (1600, 0.5)):
    noisy = OracleExecutor.from_records(test, NoiseParams(jitter_sigma=sigma, fp_rate=0.5, seed=1), input_size=320)
    rep = evaluate(predict(noisy, test), test)
    print(f"{train_size:5d} images, jitter {sigma:>3}: mAP {rep.map:5.1f} mAR {rep.mar:5.1f} mAF {rep.maf:5.1f}")
    entries.append((train_size, "oracle", rep))
print(curve_csv(curve_aggregate(entries)))

# mAF is the harmonic mean of mAP and mAR.
print("maf(63.8, 74.0) =", round(maf(63.8, 74.0), 2))
