"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 1 operation error, 2 usage error.  Reports go to
``--out`` when given, otherwise to standard output.  A ``--config`` JSON file
supplies defaults, either flat or keyed by subcommand; explicit flags win.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import threading
import time
from pathlib import Path
from typing import Sequence

from . import __version__, ppm
from .bench import BenchReport, ExecutorFailure, MissingBaseline, run_bench, speedup_table
from .dataset import DatasetError, LintConfig, lint, load_dataset, stats
from .detector import (
    ColorExecutor,
    ExecutorError,
    ExecutorProfile,
    ExternalExecutor,
    InputImage,
    NoiseParams,
    OracleExecutor,
    simulated_executor,
)
from .evaluation import (
    DuplicateKey,
    EvalReport,
    UnknownImageId,
    curve_aggregate,
    curve_csv,
    dump_predictions,
    evaluate,
    load_predictions,
)
from .geometry import letterbox
from .serve.broker import Broker, BrokerUnavailable, parse_addr
from .serve.drift import DriftState
from .serve.pipeline import PipelineConfig, postprocess
from .serve.service import InferenceService
from .synthgen import EMPTY_COLOR, InvalidParams, SceneParams, generate, generate_dataset

log = logging.getLogger("shelfpipe")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
EXECUTORS = ("oracle", "color", "simulated", "external")


class UsageError(Exception):
    pass


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def _ints(s: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in s.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def _floats(s: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in s.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


# -- executors ----------------------------------------------------------------------------


def _add_executor_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("executor")
    g.add_argument("--executor", choices=EXECUTORS, default="oracle", help="reference detection backend")
    g.add_argument("--inner", choices=("none", "oracle", "color"), default="none", help="detections behind a simulated executor")
    g.add_argument("--input-size", type=int, default=640, help="square model input size in pixels")
    g.add_argument("--cost", type=_floats, default=None, metavar="FIXED,PER_IMAGE", help="simulated cost in ms")
    g.add_argument("--empty-color", type=_ints, default=EMPTY_COLOR, metavar="R,G,B")
    g.add_argument("--tol", type=int, default=0, help="color match tolerance per channel")
    g.add_argument("--worker-cmd", default=None, help="command line of an external executor process")
    g.add_argument("--jitter", type=float, default=0.0, help="oracle corner jitter sigma (px)")
    g.add_argument("--drop", type=float, default=0.0, help="oracle miss probability")
    g.add_argument("--fp-rate", type=float, default=0.0, help="oracle false positives per image")
    g.add_argument("--noise-seed", type=int, default=0)


def _build_executor(args, kind: str, records=()):
    profile = ExecutorProfile(kind, input_size=args.input_size)
    if kind == "oracle":
        noise = NoiseParams(args.jitter, args.drop, args.fp_rate, seed=args.noise_seed)
        return OracleExecutor.from_records(records, noise, args.input_size)
    if kind == "color":
        return ColorExecutor(tuple(args.empty_color), args.tol, profile)
    if kind == "external":
        if not args.worker_cmd:
            raise UsageError("--executor external needs --worker-cmd")
        return ExternalExecutor(args.worker_cmd.split(), ExecutorProfile("external", input_size=args.input_size))
    if args.cost is None or len(args.cost) != 2:
        raise UsageError("--executor simulated needs --cost FIXED,PER_IMAGE")
    inner = None if args.inner == "none" else _build_executor(args, args.inner, records)
    return simulated_executor(
        ExecutorProfile(f"simulated{tuple(args.cost)}", input_size=args.input_size, declared_cost=tuple(args.cost)),
        inner,
    )


# -- subcommands ----------------------------------------------------------------------------


def cmd_generate(args) -> int:
    splits = args.splits
    if splits is None:
        train = round(args.n * 0.8)
        val = round(args.n * 0.1)
        splits = (train, val, args.n - train - val)
    p = SceneParams(
        img_w=args.img_w,
        img_h=args.img_h,
        rows=args.rows,
        slots_per_row=args.slots,
        empty_prob=args.empty_prob,
        seed=args.seed,
        max_empty_frac=args.max_empty_frac,
    )
    d = generate_dataset(p, args.n, tuple(splits), args.out, write_images=not args.no_images)
    log.info("wrote %d images to %s", len(d.images), args.out)
    print(json.dumps({"manifest": str(Path(args.out) / "dataset.json"), "images": len(d.images), "splits": d.split_counts()}))
    return 0


def cmd_lint(args) -> int:
    d = load_dataset(args.data)
    ref = dict(zip(("train", "val", "test"), args.reference_splits)) if args.reference_splits else None
    cfg = LintConfig(min_px=args.min_px, merge_gap_frac=args.merge_gap, max_count=args.max_count, reference_splits=ref)
    rep = lint(d, cfg)
    _write(rep.to_json() + "\n", args.out)
    return 1 if args.strict and rep.errors() else 0


def cmd_stats(args) -> int:
    s = stats(load_dataset(args.data))
    if args.out:
        s.write_csv(args.out)
    else:
        summary = {
            "images": sum(s.count_histogram.values()),
            "boxes": len(s.size_points),
            "count_histogram": {str(k): v for k, v in sorted(s.count_histogram.items())},
        }
        _write(json.dumps(summary, indent=2) + "\n", None)
    return 0


def predict_split(executor, d, records, score_thr: float, iou_thr: float, batch_size: int = 8) -> dict:
    """Run ``executor`` over dataset records through the serving math path."""
    cfg = PipelineConfig(score_thr=score_thr, iou_thr=iou_thr)
    size = executor.profile.input_size
    preds = {}
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        batch = []
        for r in chunk:
            img = ppm.read(d.image_path(r))
            t = letterbox(img.shape[1], img.shape[0], size)
            batch.append(InputImage(r.id, t.apply(img), t))
        for item, raw in zip(batch, executor.infer(batch)):
            preds[item.image_id] = postprocess(raw, item, cfg)
    return preds


def cmd_predict(args) -> int:
    d = load_dataset(args.data)
    records = d.split(args.split) if args.split != "all" else list(d.images)
    ex = _build_executor(args, args.executor, records)
    try:
        preds = predict_split(ex, d, records, args.score_thr, args.iou_thr)
    finally:
        if isinstance(ex, ExternalExecutor):
            ex.close()
    _write(dump_predictions(preds), args.out)
    return 0


def cmd_evaluate(args) -> int:
    d = load_dataset(args.data)
    records = d.split(args.split) if args.split != "all" else list(d.images)
    rep = evaluate(load_predictions(args.preds), records, max_dets=args.max_dets)
    _write(rep.to_json() + "\n", args.out)
    return 0


def cmd_curve(args) -> int:
    entries = []
    for spec in args.report:
        try:
            model, size, path = spec.split(":", 2)
            size = int(size)
        except ValueError:
            raise UsageError(f"--report expects MODEL:TRAIN_SIZE:PATH, got {spec!r}") from None
        rep = EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        entries.append((size, model, rep))
    _write(curve_csv(curve_aggregate(entries)), args.out)
    return 0


def cmd_bench(args) -> int:
    if args.compare:
        if not args.baseline:
            raise UsageError("--compare needs --baseline")
        reports = [BenchReport.from_dict(json.loads(Path(p).read_text(encoding="utf-8"))) for p in args.compare]
        table = speedup_table(reports, args.baseline)
        _write(table.to_csv() if args.format == "csv" else table.to_text(), args.out)
        return 0
    batch_sizes = args.batch_size or [1]
    n = max(batch_sizes)
    records = []
    if args.data:
        d = load_dataset(args.data)
        records = list(d.images)[:n]
        if len(records) < n:
            raise UsageError(f"dataset has {len(records)} images, batch size {n} needs more")
        encoded = [d.image_path(r).read_bytes() for r in records]
    else:
        p = SceneParams(seed=args.seed)
        encoded = [ppm.encode(generate(p, i)[0]) for i in range(n)]
    if "oracle" in (args.executor, args.inner) and not records:
        raise UsageError("the oracle executor needs --data for ground truth")
    ex = _build_executor(args, args.executor, records)
    try:
        rep = run_bench(ex, batch_sizes, encoded, args.warmup, args.iters)
    finally:
        if isinstance(ex, ExternalExecutor):
            ex.close()
    if args.name:
        rep.executor = dataclasses.replace(rep.executor, name=args.name)
    _write(rep.to_json() + "\n", args.out)
    return 0


def _run_until(stop: threading.Event, duration_s: float | None) -> None:
    try:
        stop.wait(duration_s)
    except KeyboardInterrupt:
        pass
    stop.set()


def cmd_serve(args) -> int:
    base = PipelineConfig.from_file(args.pipeline_config).to_dict() if args.pipeline_config else {}
    for key in ("batch_size", "decode_parallelism", "score_thr", "iou_thr"):
        v = getattr(args, key)
        if v is not None:
            base[key] = v
    cfg = PipelineConfig.from_dict(base)
    records = list(load_dataset(args.data).images) if args.data else []
    if "oracle" in (args.executor, args.inner) and not records:
        raise UsageError("the oracle executor needs --data for ground truth")
    ex = _build_executor(args, args.executor, records)
    drift = None
    if args.drift_ref_count is not None:
        drift = DriftState(args.drift_ref_count, args.drift_threshold, args.drift_window)
    svc = InferenceService(cfg, ex, parse_addr(args.broker), drift, max_connect_attempts=args.connect_attempts)
    svc.start()
    deadline = None if args.duration_s is None else time.monotonic() + args.duration_s
    try:
        while svc.alive and (deadline is None or time.monotonic() < deadline):
            time.sleep(0.1)
    except KeyboardInterrupt:
        pass
    finally:
        svc.stop()
        if isinstance(ex, ExternalExecutor):
            ex.close()
    if svc.error is not None:
        raise svc.error
    snap = svc.stats.snapshot()
    log.info("service stopped: %s", snap)
    print(json.dumps(snap))
    return 0


def cmd_broker(args) -> int:
    host, port = parse_addr(args.listen)
    with Broker(host, port) as b:
        print(json.dumps({"listening": f"{b.address[0]}:{b.address[1]}"}), flush=True)
        _run_until(threading.Event(), args.duration_s)
        print(json.dumps({"published": b.published, "delivered": b.delivered, "dropped": b.dropped}))
    return 0


# -- parser -------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shelfpipe", description="Empty-shelf detection pipeline tools.")
    ap.add_argument("--version", action="version", version=f"shelfpipe {__version__}")
    ap.add_argument("--config", default=None, help="JSON file with default flag values")
    ap.add_argument("--log-level", choices=tuple(LOG_LEVELS), default=None, help="overrides $SHELFPIPE_LOG")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("generate", help="render a synthetic shelf dataset")
    p.add_argument("--n", type=int, required=True, help="number of images")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--splits", type=_ints, default=None, metavar="TRAIN,VAL,TEST", help="default 80/10/10")
    p.add_argument("--img-w", type=int, default=320)
    p.add_argument("--img-h", type=int, default=240)
    p.add_argument("--rows", type=int, default=3)
    p.add_argument("--slots", type=int, default=8, help="product slots per shelf row")
    p.add_argument("--empty-prob", type=float, default=0.2)
    p.add_argument("--max-empty-frac", type=float, default=None, help="cap on gap width/height as an image fraction")
    p.add_argument("--no-images", action="store_true", help="write labels and manifest only")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("lint", help="validate annotations")
    p.add_argument("--data", required=True, help="dataset.json manifest")
    p.add_argument("--out", default=None)
    p.add_argument("--min-px", type=float, default=2.0)
    p.add_argument("--merge-gap", type=float, default=0.25, help="merge-candidate gap as a fraction of box width")
    p.add_argument("--max-count", type=int, default=15)
    p.add_argument("--reference-splits", type=_ints, default=None, metavar="TRAIN,VAL,TEST")
    p.add_argument("--strict", action="store_true", help="exit 1 when any error-severity finding exists")
    p.set_defaults(func=cmd_lint)

    p = sub.add_parser("stats", help="box count, size and position statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="directory for counts/sizes/centers CSV")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("predict", help="run a reference executor over a split")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--out", default=None, help="predictions JSONL")
    p.add_argument("--score-thr", type=float, default=0.25)
    p.add_argument("--iou-thr", type=float, default=0.45)
    _add_executor_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="COCO-style mAP / mAR / mAF")
    p.add_argument("--preds", required=True, help="predictions JSONL")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--max-dets", type=int, default=100)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("curve", help="learning-curve CSV from evaluation reports")
    p.add_argument("--report", action="append", required=True, metavar="MODEL:TRAIN_SIZE:PATH")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("bench", help="latency / throughput measurement and speedup tables")
    p.add_argument("--batch-size", type=int, action="append", default=None, help="repeatable")
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--data", default=None, help="dataset to draw images from (synthetic otherwise)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default=None, help="executor name in the report")
    p.add_argument("--compare", nargs="+", default=None, metavar="REPORT", help="bench JSON reports to tabulate")
    p.add_argument("--baseline", default=None, help="executor name used as the ratio baseline")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--out", default=None)
    _add_executor_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="streaming inference service")
    p.add_argument("--broker", default="127.0.0.1:7654", metavar="HOST:PORT")
    p.add_argument("--data", default=None, help="dataset supplying oracle ground truth")
    p.add_argument("--pipeline-config", default=None, help="JSON PipelineConfig")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--decode-parallelism", type=int, default=None)
    p.add_argument("--score-thr", type=float, default=None)
    p.add_argument("--iou-thr", type=float, default=None)
    p.add_argument("--drift-ref-count", type=float, default=None, help="reference boxes per image")
    p.add_argument("--drift-threshold", type=float, default=2.0)
    p.add_argument("--drift-window", type=int, default=50)
    p.add_argument("--connect-attempts", type=int, default=None, help="give up after this many attempts")
    p.add_argument("--duration-s", type=float, default=None, help="stop after this long (default: run until interrupted)")
    _add_executor_flags(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("broker", help="run the TCP pub/sub broker simulator")
    p.add_argument("--listen", default="127.0.0.1:7654", metavar="HOST:PORT")
    p.add_argument("--duration-s", type=float, default=None)
    p.set_defaults(func=cmd_broker)
    return ap


def _subparsers(ap: argparse.ArgumentParser) -> dict[str, argparse.ArgumentParser]:
    for action in ap._actions:
        if isinstance(action, argparse._SubParsersAction):
            return dict(action.choices)
    return {}


def _apply_config(ap: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    """Install config-file values as parser defaults so explicit flags override them."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        doc = json.loads(Path(known.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {known.config}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    if "log_level" in doc:
        ap.set_defaults(log_level=doc["log_level"])
    for name, sp in _subparsers(ap).items():
        section = {k: v for k, v in doc.items() if not isinstance(v, dict)}
        section.update(doc.get(name, {}))
        dests = {a.dest for a in sp._actions}
        values = {k.replace("-", "_"): v for k, v in section.items()}
        values = {k: v for k, v in values.items() if k in dests}
        for a in sp._actions:
            if a.dest in values:
                a.required = False
        sp.set_defaults(**values)
    known_keys = {a.dest for sp in _subparsers(ap).values() for a in sp._actions} | set(_subparsers(ap))
    unknown = [k for k in doc if k.replace("-", "_") not in known_keys and k != "log_level"]
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")


def _setup_logging(level: str | None) -> None:
    name = level or os.environ.get("SHELFPIPE_LOG", "warn").lower()
    if name not in LOG_LEVELS:
        raise UsageError(f"SHELFPIPE_LOG must be one of {', '.join(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)


OPERATION_ERRORS = (
    DatasetError,
    InvalidParams,
    UnknownImageId,
    DuplicateKey,
    MissingBaseline,
    ExecutorError,
    ExecutorFailure,
    BrokerUnavailable,
    OSError,
    ValueError,
)


def run(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        _apply_config(ap, argv)
        args = ap.parse_args(argv)
        _setup_logging(args.log_level)
        return args.func(args)
    except SystemExit as exc:
        # argparse: 0 for --help/--version, 2 for usage errors
        return exc.code if isinstance(exc.code, int) else 2
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"shelfpipe: error: {exc}", file=sys.stderr)
        return 2
    except OPERATION_ERRORS as exc:
        print(f"shelfpipe: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
