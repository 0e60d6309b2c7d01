"""Exit criteria, one test each.

Every test prints a single ``[PASS]`` / ``[FAIL]`` line (also repeated in the
pytest terminal summary).  Run on its own with::

    pytest tests/test_acceptance.py -v
    python3 tests/test_acceptance.py
"""

from __future__ import annotations

import dataclasses
import random
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from reference_eval import reference_evaluate  # noqa: E402
from reported_tables import MODEL_RESULTS, RUNTIME_RESULTS  # noqa: E402
from serve_helpers import oracle_for, run_loopback, synthetic_messages  # noqa: E402
from shelfpipe.bench import BenchConfig, BenchReport, measure, speedup_table  # noqa: E402
from shelfpipe.dataset import Dataset, LintConfig, lint  # noqa: E402
from shelfpipe.detector import (  # noqa: E402
    ExecutorProfile,
    InputImage,
    color_threshold_detect,
    simulated_executor,
)
from shelfpipe.evaluation import evaluate, maf  # noqa: E402
from shelfpipe.geometry import BBox, Detection, NormBox, iou, letterbox, nms, unmap_box  # noqa: E402
from shelfpipe.serve import pipeline_process  # noqa: E402
from shelfpipe.serve.pipeline import PipelineConfig, postprocess  # noqa: E402
from shelfpipe.synthgen import EMPTY_COLOR, SceneParams, generate, generate_dataset  # noqa: E402

pytestmark = pytest.mark.acceptance

RESULTS: list[str] = []


def record(number: int, title: str, ok: bool, detail: str, elapsed: float, limit: float) -> None:
    in_time = elapsed < limit
    line = f"[{'PASS' if ok and in_time else 'FAIL'}] {number}. {title}: {detail} ({elapsed:.2f}s, limit {limit:g}s)"
    RESULTS.append(line)
    print(line)
    assert ok, line
    assert in_time, line


# 1 ------------------------------------------------------------------------------------------


def test_c1_maf_consistency():
    t0 = time.perf_counter()
    worst, worst_row = 0.0, None
    for model, _, _, *splits in MODEL_RESULTS:
        for split_name, (m_ap, m_ar, printed) in zip(("val", "test"), splits):
            dev = abs(maf(m_ap, m_ar) - printed)
            if dev > worst:
                worst, worst_row = dev, f"{model} {split_name}"
    yolo_n = next(r for r in MODEL_RESULTS if r[0] == "YOLOv5n")[4]
    anchor = maf(yolo_n[0], yolo_n[1])
    ok = worst <= 0.25 and abs(anchor - 68.5) <= 0.05
    record(
        1,
        "mAF consistency",
        ok,
        f"34 cells, worst |dev| {worst:.3f} ({worst_row}) <= 0.25; YOLOv5n test {anchor:.2f} vs 68.5 +-0.05",
        time.perf_counter() - t0,
        1,
    )


# 2 ------------------------------------------------------------------------------------------


def test_c2_speedup_annotations():
    t0 = time.perf_counter()
    checked, worst, worst_at = 0, 0.0, None
    for model, devices in RUNTIME_RESULTS.items():
        for device, rows in devices.items():
            reports = [BenchReport.from_summary(rt, lat, tp) for rt, lat, _, tp, _ in rows]
            table = speedup_table(reports, rows[0][0])
            for rt, _, lat_note, _, tp_note in rows:
                row = table.row(rt)
                for note, label in ((lat_note, row.latency_label), (tp_note, row.throughput_label)):
                    if note is None:
                        continue
                    value = float(label.strip("()x"))
                    dev = abs(value - note)
                    checked += 1
                    if dev > worst:
                        worst, worst_at = dev, f"{model} {device} {rt} {label} vs ({note}x)"
    ok = checked > 0 and worst <= 0.2 + 1e-9
    record(2, "speedup annotations", ok, f"{checked} annotations, worst |dev| {worst:.1f}x ({worst_at}) <= 0.2x", time.perf_counter() - t0, 1)


# 3 ------------------------------------------------------------------------------------------


def _fixture(rng: random.Random):
    # coordinates on a 1/8 grid keep float IoU correctly rounded
    def box():
        return (rng.randint(0, 48) / 8, rng.randint(0, 48) / 8, rng.randint(4, 40) / 8, rng.randint(4, 40) / 8)

    gts, preds = {}, {}
    for i in range(rng.randint(1, 5)):
        k = f"im{i}"
        gts[k] = [box() for _ in range(rng.randint(0, 6))]
        dets = [
            ((g[0] + rng.randint(-6, 6) / 8, g[1] + rng.randint(-6, 6) / 8, g[2], g[3]), rng.randint(0, 8) / 8)
            for g in gts[k]
            if rng.random() < 0.8
        ]
        while len(dets) < 6 and rng.random() < 0.4:
            dets.append((box(), rng.randint(0, 8) / 8))
        preds[k] = dets[:6]
    return preds, gts


def test_c3_oracle_equivalence():
    t0 = time.perf_counter()
    rng = random.Random(20240101)
    worst = 0.0
    for _ in range(200):
        preds, gts = _fixture(rng)
        ours = evaluate(
            {k: [Detection(BBox(*b), s) for b, s in v] for k, v in preds.items()},
            {k: [BBox(*b) for b in v] for k, v in gts.items()},
        )
        ref = reference_evaluate(preds, gts)
        devs = [abs(ours.map - 100 * float(ref["map"])), abs(ours.mar - 100 * float(ref["mar"]))]
        for (ap, rc), rap, rrc in zip(ours.per_iou.values(), ref["ap"], ref["recall"]):
            devs += [abs(ap - float(rap)), abs(rc - float(rrc))]
        worst = max(worst, *devs)
    record(3, "evaluator oracle equivalence", worst <= 1e-12, f"200 fixtures, worst |dev| {worst:.2e} <= 1e-12", time.perf_counter() - t0, 30)


# 4 ------------------------------------------------------------------------------------------


def test_c4_perfect_detection(tmp_path):
    t0 = time.perf_counter()
    d = generate_dataset(SceneParams(seed=2024), 1000, (800, 100, 100), tmp_path, write_images=False)
    ex = oracle_for(d.images, input_size=640)
    cfg = PipelineConfig()
    preds = {}
    for r in d.images:
        t = letterbox(r.width, r.height, 640)
        item = InputImage(r.id, np.empty((0, 0, 3), dtype=np.uint8), t)
        preds[r.id] = postprocess(ex.infer([item])[0], item, cfg)
    reports = {"all": evaluate(preds, d.images)}
    for split in ("train", "val", "test"):
        recs = d.split(split)
        reports[split] = evaluate({r.id: preds[r.id] for r in recs}, recs)
    ok = d.split_counts() == {"train": 800, "val": 100, "test": 100} and all(
        (r.map, r.mar, r.maf) == (100.0, 100.0, 100.0) for r in reports.values()
    )
    full = reports["all"]
    record(
        4,
        "perfect-detection identity",
        ok,
        f"1000 images / {full.n_gt} boxes: mAP {full.map} mAR {full.mar} mAF {full.maf} (each split too)",
        time.perf_counter() - t0,
        120,
    )


# 5 ------------------------------------------------------------------------------------------


def test_c5_color_oracle_closure():
    t0 = time.perf_counter()
    p = SceneParams(seed=555, empty_prob=0.3)
    preds, gts = {}, {}
    worst, count_ok = 0.0, True
    for i in range(100):
        img, gt = generate(p, i)
        dets = color_threshold_detect(img, EMPTY_COLOR)
        want = sorted(([b.x, b.y, b.x2, b.y2] for b in (g.to_bbox(p.img_w, p.img_h) for g in gt)), key=lambda e: (e[1], e[0]))
        got = [[d.box.x, d.box.y, d.box.x2, d.box.y2] for d in dets]
        if len(got) != len(want):
            count_ok = False
        elif got:
            worst = max(worst, float(np.abs(np.array(got) - np.array(want)).max()))
        preds[f"i{i}"] = dets
        gts[f"i{i}"] = [g.to_bbox(p.img_w, p.img_h) for g in gt]
    rep = evaluate(preds, gts)
    ok = count_ok and worst <= 1.0 and rep.maf >= 99.0
    record(
        5,
        "independent-oracle closure",
        ok,
        f"100 images / {rep.n_gt} boxes, counts match {count_ok}, worst edge err {worst:.2f}px <= 1, mAF {rep.maf:.2f} >= 99",
        time.perf_counter() - t0,
        60,
    )


# 6 ------------------------------------------------------------------------------------------


def test_c6_bench_calibration():
    t0 = time.perf_counter()
    ex = simulated_executor(ExecutorProfile("sim", input_size=32, declared_cost=(10.0, 0.0)))
    t = letterbox(32, 32, 32)
    work = [InputImage("w", np.zeros((32, 32, 3), dtype=np.uint8), t)]
    cfg = BenchConfig(batch_size=1, warmup_iters=10, timed_iters=100, input_size=32)
    s, tp = measure(ex, cfg, work)
    ordered = s.min_ms <= s.p50_ms <= s.p95_ms <= s.p99_ms <= s.max_ms
    bound = cfg.batch_size * 1000.0 / (s.mean_ms * 1.05)
    ok = 10.0 <= s.mean_ms <= 12.0 and ordered and tp >= bound and s.samples == 100
    record(
        6,
        "bench harness calibration",
        ok,
        f"mean {s.mean_ms:.3f}ms in [10,12], min<=p50<=p95<=p99<=max {ordered}, throughput {tp:.1f} >= {bound:.1f}",
        time.perf_counter() - t0,
        30,
    )


# 7 ------------------------------------------------------------------------------------------


def test_c7_serve_loopback(broker):
    t0 = time.perf_counter()
    msgs, records = synthetic_messages(100, seed=77)
    ex = oracle_for(records)
    out, stats, _ = run_loopback(broker, ex, msgs, PipelineConfig(stats_interval_s=0.2), timeout=50)
    identical = len(out) == 100 and all(out[m.image_id]["boxes"] == pipeline_process(m, ex).to_dict()["boxes"] for m in msgs)
    in_bounds = all(
        0 <= b["x"] and 0 <= b["y"] and b["x"] + b["w"] <= m.width and b["y"] + b["h"] <= m.height
        for m in msgs
        for b in out.get(m.image_id, {"boxes": []})["boxes"]
    )
    ticks = [s for s in stats if s.get("type") == "stats"]
    timings = bool(ticks) and all(ticks[-1]["stage_ms"].get(k) is not None for k in ("decode", "infer", "post"))
    n_boxes = sum(len(v["boxes"]) for v in out.values())
    record(
        7,
        "serve loopback",
        identical and in_bounds and timings,
        f"{len(out)}/100 messages, {n_boxes} boxes bit-identical {identical}, in bounds {in_bounds}, stage timings {timings}",
        time.perf_counter() - t0,
        60,
    )


# 8 ------------------------------------------------------------------------------------------

_coord = st.floats(0, 500, allow_nan=False, allow_infinity=False)
_size = st.floats(0.01, 300, allow_nan=False, allow_infinity=False)
_boxes = st.builds(BBox, _coord, _coord, _size, _size)
_small = st.builds(BBox, st.floats(0, 60), st.floats(0, 60), st.floats(0.5, 40), st.floats(0.5, 40))
CASES = 1000


def test_c8_geometry_properties():
    t0 = time.perf_counter()
    counts = {"iou": 0, "nms": 0, "letterbox": 0}

    @settings(max_examples=CASES, deadline=None, database=None)
    @given(_boxes, _boxes)
    def iou_props(a, b):
        counts["iou"] += 1
        v = iou(a, b)
        assert v == iou(b, a) and 0.0 <= v <= 1.0

    @settings(max_examples=CASES, deadline=None, database=None)
    @given(st.lists(st.tuples(_small, st.floats(0, 1)), max_size=30), st.floats(0.05, 0.95))
    def nms_props(items, thr):
        counts["nms"] += 1
        out = nms([Detection(b, s) for b, s in items], iou_thr=thr, score_thr=0.0)
        for i in range(len(out)):
            for j in range(i + 1, len(out)):
                assert iou(out[i].box, out[j].box) <= thr
        assert nms(out, iou_thr=thr, score_thr=0.0) == out

    worst = [0.0]

    @settings(max_examples=CASES, deadline=None, database=None)
    @given(
        st.integers(1, 5000),
        st.integers(1, 5000),
        st.sampled_from([256, 320, 512, 640, 768, 1280]),
        st.floats(0, 1),
        st.floats(0, 1),
        st.floats(0.001, 1),
        st.floats(0.001, 1),
    )
    def letterbox_props(w, h, size, fx, fy, fw, fh):
        counts["letterbox"] += 1
        t = letterbox(w, h, size)
        b = BBox(fx * w, fy * h, fw * w, fh * h)
        back = unmap_box(t, t.map_box(b))
        err = max(abs(u - v) / max(1.0, abs(v)) for u, v in zip(back.as_tuple(), b.as_tuple()))
        worst[0] = max(worst[0], err)
        assert err < 1e-6

    failure = None
    for prop in (iou_props, nms_props, letterbox_props):
        try:
            prop()
        except AssertionError as exc:  # hypothesis re-raises the minimal failing case
            failure = f"{prop.__name__}: {exc}"
    ok = failure is None and all(n >= CASES for n in counts.values())
    detail = f"cases {counts}, letterbox worst rel err {worst[0]:.1e} < 1e-6"
    record(8, "geometry property suite", ok, detail + (f"; {failure}" if failure else ""), time.perf_counter() - t0, 30)


# 9 ------------------------------------------------------------------------------------------


def test_c9_lint_closure(tmp_path):
    t0 = time.perf_counter()
    d = generate_dataset(SceneParams(), 1000, (800, 100, 100), tmp_path, write_images=False)
    clean = lint(d, LintConfig())
    oob = NormBox(0.95, 0.5, 0.2, 0.1)  # right edge at 1.05
    left = NormBox(0.30, 0.5, 0.1, 0.2)
    right = NormBox(0.30 + 0.1 + 0.001, 0.5, 0.1, 0.2)  # 0.001 gap
    images = list(d.images)
    images[0] = dataclasses.replace(images[0], boxes=(oob,))
    images[1] = dataclasses.replace(images[1], boxes=(left, right))
    injected = lint(Dataset(d.name, tuple(images), d.declared_splits, d.root), LintConfig())
    rules = sorted((f.image_id, f.rule_id, f.severity) for f in injected.findings)
    expected = sorted([(images[0].id, "L1", "error"), (images[1].id, "L3", "warning")])
    ok = not clean.errors() and rules == expected
    record(
        9,
        "lint / generator closure",
        ok,
        f"clean: {len(clean.errors())} errors; injected findings {[r[1] for r in rules]} (expect one L1 error, one L3 warning)",
        time.perf_counter() - t0,
        30,
    )


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
