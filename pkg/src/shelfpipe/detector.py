"""Executor contract and reference executors.

Executors see letterboxed square inputs and return raw, pre-NMS detections in
input-space pixels.  Mapping back to original-image coordinates is the
pipeline's job.
"""

from __future__ import annotations

import json
import subprocess
import time
import zlib
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np
from scipy import ndimage

from . import ppm
from .geometry import BBox, Detection, LetterboxTransform, NormBox


class ExecutorError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExecutorProfile:
    name: str
    input_size: int = 640
    params_m: float | None = None
    precision: str = "fp32"
    # (base_ms, per_image_ms) for simulated executors
    declared_cost: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.input_size <= 0:
            raise ValueError("input_size must be positive")
        if self.precision not in ("fp32", "fp16"):
            raise ValueError(f"unknown precision {self.precision!r}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_size": self.input_size,
            "params_m": self.params_m,
            "precision": self.precision,
            "declared_cost": list(self.declared_cost) if self.declared_cost else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> ExecutorProfile:
        cost = d.get("declared_cost")
        return cls(
            name=d["name"],
            input_size=int(d.get("input_size", 640)),
            params_m=d.get("params_m"),
            precision=d.get("precision", "fp32"),
            declared_cost=tuple(cost) if cost else None,
        )


@dataclass(frozen=True)
class InputImage:
    """One letterboxed model input plus the metadata needed to interpret it."""

    image_id: str
    pixels: np.ndarray
    transform: LetterboxTransform


class Executor(Protocol):
    profile: ExecutorProfile

    def infer(self, batch: Sequence[InputImage]) -> list[list[Detection]]: ...


@dataclass(frozen=True)
class NoiseParams:
    jitter_sigma: float = 0.0
    drop_prob: float = 0.0
    fp_rate: float = 0.0
    tp_mean: float = 0.9
    tp_sd: float = 0.0
    fp_mean: float = 0.3
    fp_sd: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.jitter_sigma < 0 or self.tp_sd < 0 or self.fp_sd < 0:
            raise ValueError("standard deviations must be >= 0")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop_prob must lie in [0, 1]")
        if self.fp_rate < 0:
            raise ValueError("fp_rate must be >= 0")


def _score(rng: np.random.Generator, mean: float, sd: float) -> float:
    s = rng.normal(mean, sd) if sd > 0 else mean
    return float(min(1.0, max(0.0, s)))


def oracle_predict(gt: Sequence[NormBox], img_w: int, img_h: int, noise: NoiseParams) -> list[Detection]:
    """Ground truth degraded by dropout, corner jitter and Poisson false positives."""
    rng = np.random.Generator(np.random.PCG64(noise.seed))
    out = []
    for b in gt:
        box = b.to_bbox(img_w, img_h)
        if noise.drop_prob > 0 and rng.random() < noise.drop_prob:
            continue
        if noise.jitter_sigma > 0:
            d = rng.normal(0.0, noise.jitter_sigma, size=4)
            x1, y1 = box.x + d[0], box.y + d[1]
            x2, y2 = max(box.x2 + d[2], x1 + 1e-3), max(box.y2 + d[3], y1 + 1e-3)
            box = BBox.from_xyxy(x1, y1, x2, y2)
        out.append(Detection(box, _score(rng, noise.tp_mean, noise.tp_sd)))
    n_fp = int(rng.poisson(noise.fp_rate)) if noise.fp_rate > 0 else 0
    for _ in range(n_fp):
        w = rng.uniform(0.02, 0.25) * img_w
        h = rng.uniform(0.02, 0.25) * img_h
        box = BBox(rng.uniform(0, img_w - w), rng.uniform(0, img_h - h), w, h)
        out.append(Detection(box, _score(rng, noise.fp_mean, noise.fp_sd)))
    return out


def color_threshold_detect(image: np.ndarray, empty_color: Sequence[int], tol: int = 0) -> list[Detection]:
    """Bounding rectangles of 4-connected regions whose pixels match ``empty_color``.

    Each channel may differ by at most ``tol``.  Scores are fixed at 1.0 and the
    output is ordered top-to-bottom, then left-to-right.
    """
    diff = np.abs(image.astype(np.int16) - np.asarray(empty_color, dtype=np.int16))
    mask = np.all(diff <= tol, axis=-1)
    labels, n = ndimage.label(mask)
    if n == 0:
        return []
    dets = []
    for sl in ndimage.find_objects(labels):
        ys, xs = sl
        dets.append(Detection(BBox(float(xs.start), float(ys.start), float(xs.stop - xs.start), float(ys.stop - ys.start)), 1.0))
    dets.sort(key=lambda d: (d.box.y, d.box.x))
    return dets


def _image_seed(base: int, image_id: str) -> int:
    return (base ^ zlib.crc32(image_id.encode("utf-8"))) & (2**64 - 1)


@dataclass
class OracleExecutor:
    """Emits (optionally noisy) ground truth for images it has annotations for."""

    gt: Mapping[str, tuple[Sequence[NormBox], int, int]]
    noise: NoiseParams = field(default_factory=NoiseParams)
    profile: ExecutorProfile = field(default_factory=lambda: ExecutorProfile("oracle"))

    @classmethod
    def from_records(cls, records, noise: NoiseParams | None = None, input_size: int = 640) -> OracleExecutor:
        gt = {r.id: (r.boxes, r.width, r.height) for r in records}
        return cls(gt, noise or NoiseParams(), ExecutorProfile("oracle", input_size=input_size))

    def infer(self, batch: Sequence[InputImage]) -> list[list[Detection]]:
        out = []
        for item in batch:
            if item.image_id not in self.gt:
                raise ExecutorError(f"oracle has no annotations for {item.image_id!r}")
            boxes, w, h = self.gt[item.image_id]
            noise = NoiseParams(**{**self.noise.__dict__, "seed": _image_seed(self.noise.seed, item.image_id)})
            dets = oracle_predict(boxes, w, h, noise)
            out.append([Detection(item.transform.map_box(d.box), d.score) for d in dets])
        return out


@dataclass
class ColorExecutor:
    empty_color: tuple[int, int, int]
    tol: int = 0
    profile: ExecutorProfile = field(default_factory=lambda: ExecutorProfile("color"))

    def infer(self, batch: Sequence[InputImage]) -> list[list[Detection]]:
        return [color_threshold_detect(item.pixels, self.empty_color, self.tol) for item in batch]


def _wait_ms(ms: float) -> None:
    if ms <= 0:
        return
    deadline = time.perf_counter() + ms / 1000.0
    # sleep most of the way, spin the tail for sub-millisecond accuracy
    coarse = ms / 1000.0 - 0.0015
    if coarse > 0:
        time.sleep(coarse)
    while time.perf_counter() < deadline:
        pass


@dataclass
class SimulatedExecutor:
    """Costs ``base_ms + per_image_ms * batch_size`` of wall time per call."""

    profile: ExecutorProfile
    inner: Executor | None = None

    def infer(self, batch: Sequence[InputImage]) -> list[list[Detection]]:
        base_ms, per_image_ms = self.profile.declared_cost or (0.0, 0.0)
        _wait_ms(base_ms + per_image_ms * len(batch))
        if self.inner is not None:
            return self.inner.infer(batch)
        return [[] for _ in batch]


def simulated_executor(profile: ExecutorProfile, inner: Executor | None = None) -> SimulatedExecutor:
    if profile.declared_cost is None:
        raise ValueError(f"profile {profile.name!r} has no declared_cost")
    return SimulatedExecutor(profile, inner)


def encode_request(item: InputImage) -> str:
    return json.dumps({"image_id": item.image_id, "input_size": item.transform.input_size, "pixels": ppm.to_b64(item.pixels)})


def encode_response(image_id: str, dets: Sequence[Detection]) -> str:
    return json.dumps({"image_id": image_id, "detections": [d.to_dict() for d in dets]})


class ExternalExecutor:
    """Runs a child process speaking one JSON object per line on stdin/stdout.

    For every image in a batch the adapter writes one request line
    ``{image_id, input_size, pixels}`` (``pixels`` is a base64 PPM) and then
    reads one response line ``{image_id, detections: [{x, y, w, h, score}]}``
    per image, in request order.
    """

    def __init__(self, cmd: Sequence[str], profile: ExecutorProfile, timeout_s: float = 30.0):
        self.profile = profile
        self.cmd = list(cmd)
        self.timeout_s = timeout_s
        self._proc = subprocess.Popen(
            self.cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
        )

    def infer(self, batch: Sequence[InputImage]) -> list[list[Detection]]:
        proc = self._proc
        if proc.poll() is not None:
            raise ExecutorError(f"executor process exited with code {proc.returncode}")
        try:
            for item in batch:
                proc.stdin.write(encode_request(item) + "\n")
            proc.stdin.flush()
            out = []
            for item in batch:
                line = proc.stdout.readline()
                if not line:
                    raise ExecutorError("executor process closed its output")
                resp = json.loads(line)
                if resp.get("image_id") != item.image_id:
                    raise ExecutorError(f"response for {resp.get('image_id')!r}, expected {item.image_id!r}")
                out.append([Detection.from_dict(d) for d in resp["detections"]])
            return out
        except (OSError, ValueError, KeyError) as exc:
            raise ExecutorError(f"external executor failed: {exc}") from exc

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=self.timeout_s)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> ExternalExecutor:
        return self

    def __exit__(self, *exc) -> None:
        self.close()
