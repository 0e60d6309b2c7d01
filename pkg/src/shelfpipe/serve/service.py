"""Streaming inference service.

Stages, each on its own threads and connected by queues::

    consumer -> decode pool -> batch former / inference lane -> postprocess pool -> publisher

The executor is touched only by the single inference lane.  A semaphore caps
the number of messages between consumption and publication at
``decode_parallelism + batch_size``, which is what throttles consumption when
the executor is slow.  Delivery is at-most-once: failures are counted and
reported on the stats topic, never retried.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from ..bench import percentile
from ..detector import Executor, InputImage
from ..ppm import DecodeError
from .broker import BrokerUnavailable, connect_with_retry
from .drift import DriftState, drift_update
from .messages import DetectionMessage, ImageMessage
from .pipeline import PipelineConfig, decode_message, postprocess, prepare, run_executor

log = logging.getLogger(__name__)


@dataclass
class _Pending:
    msg: ImageMessage
    item: InputImage
    t0: float


class ServiceStats:
    def __init__(self, window: int = 10000):
        self._lock = threading.Lock()
        self.processed = 0
        self.errors = 0
        self.dropped = 0
        self.in_flight = 0
        self.max_in_flight = 0
        self._lat = deque(maxlen=window)
        self._stage = {"decode": deque(maxlen=window), "infer": deque(maxlen=window), "post": deque(maxlen=window)}

    def add(self, **kw: int) -> None:
        with self._lock:
            for k, v in kw.items():
                setattr(self, k, getattr(self, k) + v)
            self.max_in_flight = max(self.max_in_flight, self.in_flight)

    def stage(self, name: str, ms: float) -> None:
        with self._lock:
            self._stage[name].append(ms)

    def latency(self, ms: float) -> None:
        with self._lock:
            self._lat.append(ms)

    def snapshot(self) -> dict:
        with self._lock:
            lat = sorted(self._lat)
            pct = {f"p{p}": (percentile(lat, p) if lat else None) for p in (50, 95, 99)}
            stage = {k: (sum(v) / len(v) if v else None) for k, v in self._stage.items()}
            return {
                "type": "stats",
                "processed": self.processed,
                "errors": self.errors,
                "dropped": self.dropped,
                "lat_ms": pct,
                "stage_ms": stage,
            }


class InferenceService:
    def __init__(
        self,
        cfg: PipelineConfig,
        executor: Executor,
        broker_addr: tuple[str, int],
        drift: DriftState | None = None,
        backoff_cap_s: float = 2.0,
        max_connect_attempts: int | None = None,
    ):
        self.cfg = cfg
        self.executor = executor
        self.broker_addr = broker_addr
        self.drift = drift
        self.backoff_cap_s = backoff_cap_s
        self.max_connect_attempts = max_connect_attempts
        self.stats = ServiceStats()
        self.ready = threading.Event()
        self._stop = threading.Event()
        self._slots = threading.BoundedSemaphore(cfg.decode_parallelism + cfg.batch_size)
        self._batch_q: queue.Queue[_Pending] = queue.Queue()
        self._client = None
        self._client_lock = threading.Lock()
        self._thread: threading.Thread | None = None
        self._drift_lock = threading.Lock()
        self.error: BaseException | None = None

    # -- lifecycle --------------------------------------------------------------

    def start(self) -> InferenceService:
        self._thread = threading.Thread(target=self._run_quietly, name="service", daemon=True)
        self._thread.start()
        return self

    def _run_quietly(self) -> None:
        try:
            self.run()
        except BrokerUnavailable as exc:
            log.error("giving up: %s", exc)

    @property
    def alive(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    def stop(self, timeout: float = 5.0) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout)

    def __enter__(self) -> InferenceService:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _connect(self):
        host, port = self.broker_addr
        client = connect_with_retry(
            host, port, cap_s=self.backoff_cap_s, max_attempts=self.max_connect_attempts, stop=self._stop
        )
        client.subscribe(self.cfg.topic_in)
        with self._client_lock:
            self._client = client
        return client

    def run(self) -> None:
        """Serve until :meth:`stop` is called."""
        try:
            client = self._connect()
        except BrokerUnavailable as exc:
            if self._stop.is_set():
                return
            self.error = exc
            raise
        self.ready.set()
        decode_pool = ThreadPoolExecutor(self.cfg.decode_parallelism, thread_name_prefix="decode")
        post_pool = ThreadPoolExecutor(self.cfg.decode_parallelism, thread_name_prefix="post")
        lane = threading.Thread(target=self._lane, args=(post_pool,), name="infer-lane", daemon=True)
        ticker = threading.Thread(target=self._ticker, name="stats", daemon=True)
        lane.start()
        ticker.start()
        try:
            while not self._stop.is_set():
                if client.closed.is_set():
                    log.warning("broker connection lost, reconnecting")
                    try:
                        client = self._connect()
                    except BrokerUnavailable as exc:
                        if not self._stop.is_set():
                            self.error = exc
                        break
                got = client.recv(timeout=0.05)
                if got is None:
                    continue
                _, payload = got
                try:
                    msg = ImageMessage.from_dict(payload)
                except (KeyError, TypeError, ValueError) as exc:
                    self.stats.add(dropped=1)
                    self._publish(self.cfg.topic_stats, {"type": "error", "error": "bad_message", "message": str(exc)})
                    continue
                while not self._slots.acquire(timeout=0.05):
                    if self._stop.is_set():
                        return
                self.stats.add(in_flight=1)
                decode_pool.submit(self._decode, msg)
        finally:
            self._stop.set()
            decode_pool.shutdown(wait=True)
            lane.join()
            post_pool.shutdown(wait=True)
            ticker.join()
            with self._client_lock:
                if self._client is not None:
                    self._client.close()

    # -- stages -------------------------------------------------------------------

    def _release(self) -> None:
        self.stats.add(in_flight=-1)
        self._slots.release()

    def _decode(self, msg: ImageMessage) -> None:
        t0 = time.perf_counter()
        try:
            item = prepare(msg.image_id, decode_message(msg), self.executor.profile.input_size)
        except DecodeError as exc:
            self.stats.add(errors=1)
            self._publish(
                self.cfg.topic_stats, {"type": "error", "error": "decode", "image_id": msg.image_id, "message": str(exc)}
            )
            self._release()
            return
        self.stats.stage("decode", (time.perf_counter() - t0) * 1000.0)
        self._batch_q.put(_Pending(msg, item, t0))

    def _next_batch(self) -> list[_Pending]:
        try:
            first = self._batch_q.get(timeout=0.05)
        except queue.Empty:
            return []
        batch = [first]
        deadline = time.perf_counter() + self.cfg.batch_timeout_ms / 1000.0
        while len(batch) < self.cfg.batch_size:
            remaining = deadline - time.perf_counter()
            if remaining <= 0:
                break
            try:
                batch.append(self._batch_q.get(timeout=remaining))
            except queue.Empty:
                break
        return batch

    def _lane(self, post_pool: ThreadPoolExecutor) -> None:
        while not (self._stop.is_set() and self._batch_q.empty()):
            batch = self._next_batch()
            if not batch:
                continue
            t0 = time.perf_counter()
            try:
                raw = run_executor(self.executor, [p.item for p in batch])
            except Exception as exc:
                log.error("executor failed on a batch of %d: %s", len(batch), exc)
                self.stats.add(dropped=len(batch))
                self._publish(self.cfg.topic_stats, {"type": "error", "error": "executor", "message": str(exc)})
                for _ in batch:
                    self._release()
                continue
            self.stats.stage("infer", (time.perf_counter() - t0) * 1000.0)
            for pending, dets in zip(batch, raw):
                post_pool.submit(self._post, pending, dets)

    def _post(self, pending: _Pending, raw) -> None:
        try:
            t0 = time.perf_counter()
            boxes = postprocess(raw, pending.item, self.cfg)
            self.stats.stage("post", (time.perf_counter() - t0) * 1000.0)
            latency = (time.perf_counter() - pending.t0) * 1000.0
            out = DetectionMessage(pending.msg.image_id, boxes, latency, self.executor.profile.name)
            if self._publish(self.cfg.topic_out, out.to_dict()):
                self.stats.add(processed=1)
                self.stats.latency(latency)
            else:
                self.stats.add(dropped=1)
            if self.drift is not None:
                with self._drift_lock:
                    alert = drift_update(self.drift, out)
                if alert is not None:
                    self._publish(self.cfg.topic_stats, alert.to_dict())
        finally:
            self._release()

    def _ticker(self) -> None:
        while not self._stop.wait(self.cfg.stats_interval_s):
            self._publish(self.cfg.topic_stats, self.stats.snapshot())
        self._publish(self.cfg.topic_stats, self.stats.snapshot())

    def _publish(self, topic: str, payload: dict) -> bool:
        with self._client_lock:
            client = self._client
        if client is None:
            return False
        try:
            client.publish(topic, payload)
            return True
        except BrokerUnavailable as exc:
            log.warning("publish to %s failed: %s", topic, exc)
            return False


def serve(
    cfg: PipelineConfig,
    executor: Executor,
    broker_addr: tuple[str, int],
    stop: threading.Event | None = None,
    drift: DriftState | None = None,
) -> InferenceService:
    """Run the service in the foreground until ``stop`` is set (or forever)."""
    svc = InferenceService(cfg, executor, broker_addr, drift)
    if stop is not None:
        threading.Thread(target=lambda: (stop.wait(), svc.stop()), daemon=True).start()
    svc.run()
    return svc
