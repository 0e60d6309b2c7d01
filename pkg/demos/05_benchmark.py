"""
Latency, throughput and speedup tables
======================================

A simulated executor costs a declared amount of wall time per call, so the
harness itself can be checked against known answers.
"""

from shelfpipe import ppm
from shelfpipe.bench import BenchReport, run_bench, speedup_table
from shelfpipe.detector import ExecutorProfile, simulated_executor
from shelfpipe.synthgen import SceneParams, generate

images = [ppm.encode(generate(SceneParams(seed=1), i)[0]) for i in range(8)]

reports = []
for name, cost in (("baseline", (8.0, 0.5)), ("optimized", (2.0, 0.1))):
    ex = simulated_executor(ExecutorProfile(name, input_size=320, declared_cost=cost))
    rep = run_bench(ex, [1, 8], images, warmup_iters=3, timed_iters=30)
    reports.append(rep)
    bs1 = rep.rows[0]
    print(f"{name:10s} BS=1 mean {bs1.latency.mean_ms:.2f}ms p95 {bs1.latency.p95_ms:.2f}ms,"
          f" BS=8 {rep.rows[1].throughput:.0f} img/s, preprocess {bs1.preprocess.mean_ms:.2f}ms")

print(speedup_table(reports, "baseline").to_text())

# The same formatter applied to already-published numbers.
published = [BenchReport.from_summary("cpu-fp32", 54.2, 3.9), BenchReport.from_summary("tuned", 14.6, 67.2)]
# Ratios are this/baseline: below 1 is faster for latency, above 1 is better for throughput.
print(speedup_table(published, "cpu-fp32").to_csv())
