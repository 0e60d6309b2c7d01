"""Latency / throughput measurement and speedup tables.

Latency is measured per ``infer`` call at a given batch size; throughput is
images processed per second of timed wall clock.  Decoding and letterboxing
happen once, before the timed loop, and are reported separately.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

from . import ppm
from .detector import Executor, ExecutorProfile, InputImage
from .geometry import letterbox


class ExecutorFailure(RuntimeError):
    pass


class MissingBaseline(KeyError):
    def __str__(self) -> str:
        return f"baseline {self.args[0]!r} not among the reports"


@dataclass(frozen=True)
class BenchConfig:
    batch_size: int = 1
    warmup_iters: int = 10
    timed_iters: int = 100
    input_size: int = 640

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.timed_iters < 1 or self.warmup_iters < 0:
            raise ValueError("batch_size and timed_iters must be >= 1, warmup_iters >= 0")


@dataclass(frozen=True)
class LatencyStats:
    mean_ms: float
    p50_ms: float
    p95_ms: float
    p99_ms: float
    min_ms: float
    max_ms: float
    samples: int

    @classmethod
    def from_samples(cls, samples_ms: Sequence[float]) -> LatencyStats:
        if not samples_ms:
            raise ValueError("no samples")
        s = sorted(samples_ms)
        return cls(
            mean_ms=sum(s) / len(s),
            p50_ms=percentile(s, 50),
            p95_ms=percentile(s, 95),
            p99_ms=percentile(s, 99),
            min_ms=s[0],
            max_ms=s[-1],
            samples=len(s),
        )

    @classmethod
    def single(cls, value_ms: float) -> LatencyStats:
        return cls.from_samples([value_ms])

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def percentile(sorted_samples: Sequence[float], p: float) -> float:
    """Nearest-rank percentile of already sorted samples."""
    n = len(sorted_samples)
    rank = max(1, math.ceil(p / 100.0 * n))
    return sorted_samples[min(rank, n) - 1]


@dataclass(frozen=True)
class BenchRow:
    batch_size: int
    latency: LatencyStats
    throughput: float
    preprocess: LatencyStats | None = None

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "latency": self.latency.to_dict(),
            "throughput": self.throughput,
            "preprocess": self.preprocess.to_dict() if self.preprocess else None,
        }


@dataclass
class BenchReport:
    executor: ExecutorProfile
    rows: list[BenchRow] = field(default_factory=list)
    baseline_name: str | None = None

    @property
    def name(self) -> str:
        return self.executor.name

    def latency_ms(self) -> float | None:
        """Mean latency at batch size 1, if measured."""
        for r in self.rows:
            if r.batch_size == 1:
                return r.latency.mean_ms
        return None

    def throughput(self) -> tuple[int, float] | None:
        """(batch_size, images/s) of the largest batch size above 1, if measured."""
        rows = [r for r in self.rows if r.batch_size > 1]
        if not rows:
            return None
        r = max(rows, key=lambda r: r.batch_size)
        return r.batch_size, r.throughput

    @classmethod
    def from_summary(
        cls, name: str, latency_ms: float | None = None, throughput: float | None = None, throughput_batch: int = 32
    ) -> BenchReport:
        """Report built from already-summarized numbers (e.g. a published table)."""
        rows = []
        if latency_ms is not None:
            rows.append(BenchRow(1, LatencyStats.single(latency_ms), 1000.0 / latency_ms))
        if throughput is not None:
            rows.append(BenchRow(throughput_batch, LatencyStats.single(throughput_batch * 1000.0 / throughput), throughput))
        return cls(ExecutorProfile(name), rows)

    def to_dict(self) -> dict:
        return {
            "executor": self.executor.to_dict(),
            "rows": [r.to_dict() for r in self.rows],
            "baseline_name": self.baseline_name,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> BenchReport:
        def stats(x):
            return LatencyStats(**x) if x else None

        rows = [BenchRow(r["batch_size"], stats(r["latency"]), r["throughput"], stats(r.get("preprocess"))) for r in d["rows"]]
        return cls(ExecutorProfile.from_dict(d["executor"]), rows, d.get("baseline_name"))


def prepare_batch(encoded: Sequence[bytes], input_size: int) -> tuple[list[InputImage], float]:
    """Decode + letterbox a batch of PPM images; returns inputs and elapsed ms."""
    t0 = time.perf_counter()
    batch = []
    for i, data in enumerate(encoded):
        img = ppm.decode(data)
        t = letterbox(img.shape[1], img.shape[0], input_size)
        batch.append(InputImage(f"bench_{i}", t.apply(img), t))
    return batch, (time.perf_counter() - t0) * 1000.0


def _take(workload: Sequence, n: int) -> list:
    if len(workload) < n:
        raise ValueError(f"workload has {len(workload)} images, batch needs {n}")
    return list(workload[:n])


def measure(
    executor: Executor,
    cfg: BenchConfig,
    workload: Sequence[InputImage],
    clock: Callable[[], float] = time.perf_counter,
) -> tuple[LatencyStats, float]:
    """Time ``cfg.timed_iters`` calls on a fixed, pre-decoded batch after warmup."""
    batch = _take(workload, cfg.batch_size)
    samples = []
    try:
        for _ in range(cfg.warmup_iters):
            executor.infer(batch)
        start = clock()
        for _ in range(cfg.timed_iters):
            t0 = clock()
            out = executor.infer(batch)
            samples.append((clock() - t0) * 1000.0)
            if len(out) != len(batch):
                raise ExecutorFailure(f"executor returned {len(out)} results for a batch of {len(batch)}")
        total_s = clock() - start
    except ExecutorFailure:
        raise
    except Exception as exc:
        raise ExecutorFailure(f"{executor.profile.name}: {exc}") from exc
    return LatencyStats.from_samples(samples), cfg.batch_size * cfg.timed_iters / total_s


def run_bench(
    executor: Executor,
    batch_sizes: Sequence[int],
    encoded_images: Sequence[bytes],
    warmup_iters: int = 10,
    timed_iters: int = 100,
) -> BenchReport:
    """Measure every batch size; preprocessing is timed per batch, outside the loop."""
    report = BenchReport(executor.profile)
    size = executor.profile.input_size
    for bs in batch_sizes:
        cfg = BenchConfig(bs, warmup_iters, timed_iters, size)
        pre_samples = []
        batch = None
        for _ in range(max(1, min(timed_iters, 5))):
            batch, ms = prepare_batch(_take(encoded_images, bs), size)
            pre_samples.append(ms)
        stats, tp = measure(executor, cfg, batch)
        report.rows.append(BenchRow(bs, stats, tp, LatencyStats.from_samples(pre_samples)))
    return report


# -- speedup tables -----------------------------------------------------------------


@dataclass(frozen=True)
class SpeedupRow:
    name: str
    latency_ms: float | None
    latency_ratio: float | None
    throughput: float | None
    throughput_ratio: float | None
    throughput_batch: int | None

    @property
    def latency_label(self) -> str:
        return "" if self.latency_ratio is None else f"({self.latency_ratio:.1f}x)"

    @property
    def throughput_label(self) -> str:
        return "" if self.throughput_ratio is None else f"({self.throughput_ratio:.1f}x)"


@dataclass(frozen=True)
class SpeedupTable:
    baseline: str
    rows: tuple[SpeedupRow, ...]

    def row(self, name: str) -> SpeedupRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def _cells(self) -> list[list[str]]:
        out = []
        for r in self.rows:
            lat = "" if r.latency_ms is None else f"{r.latency_ms:.1f}{r.latency_label}"
            tp = "" if r.throughput is None else f"{r.throughput:.1f}{r.throughput_label}"
            out.append([r.name, lat, tp])
        return out

    def _tp_header(self) -> str:
        batches = {r.throughput_batch for r in self.rows if r.throughput_batch}
        return f"TP [BS={batches.pop()}] img/s" if len(batches) == 1 else "TP img/s"

    def to_text(self) -> str:
        header = ["executor", "Lat. ms", self._tp_header()]
        rows = [header] + self._cells()
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in rows]
        return "\n".join(line.rstrip() for line in lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["executor", "latency_ms", "latency_ratio", "throughput", "throughput_ratio", "throughput_batch"])
        for r in self.rows:
            w.writerow([
                r.name,
                "" if r.latency_ms is None else r.latency_ms,
                "" if r.latency_ratio is None else f"{r.latency_ratio:.1f}",
                "" if r.throughput is None else r.throughput,
                "" if r.throughput_ratio is None else f"{r.throughput_ratio:.1f}",
                r.throughput_batch or "",
            ])
        return buf.getvalue()


def speedup_table(reports: Sequence[BenchReport], baseline: str) -> SpeedupTable:
    """Latency and throughput of every report relative to ``baseline``.

    Both annotations are plain ratios ``this / baseline``: a latency ratio
    below 1 means faster, a throughput ratio above 1 means more images/s.
    """
    base = next((r for r in reports if r.name == baseline), None)
    if base is None:
        raise MissingBaseline(baseline)
    base_lat = base.latency_ms()
    base_tp = base.throughput()
    rows = []
    for rep in reports:
        lat = rep.latency_ms()
        tp = rep.throughput()
        rows.append(
            SpeedupRow(
                name=rep.name,
                latency_ms=lat,
                latency_ratio=lat / base_lat if lat is not None and base_lat else None,
                throughput=tp[1] if tp else None,
                throughput_ratio=tp[1] / base_tp[1] if tp and base_tp else None,
                throughput_batch=tp[0] if tp else None,
            )
        )
    return SpeedupTable(baseline, tuple(rows))
