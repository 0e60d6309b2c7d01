"""Shared loopback harness for the streaming tests."""

from __future__ import annotations

import time

from shelfpipe.dataset import ImageRecord
from shelfpipe.detector import OracleExecutor
from shelfpipe.serve import BrokerClient, ImageMessage, InferenceService, PipelineConfig
from shelfpipe.synthgen import SceneParams, generate


def wait_for(cond, timeout=5.0, step=0.01):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if cond():
            return True
        time.sleep(step)
    return cond()


def synthetic_messages(n, seed=21, empty_prob=0.4):
    p = SceneParams(seed=seed, empty_prob=empty_prob)
    msgs, records = [], []
    for i in range(n):
        img, gt = generate(p, i)
        image_id = f"img_{i:04d}"
        msgs.append(ImageMessage.from_array(image_id, img, ts_ms=0))
        records.append(ImageRecord(image_id, f"{image_id}.ppm", p.img_w, p.img_h, "test", tuple(gt)))
    return msgs, records


def oracle_for(records, input_size=320):
    return OracleExecutor.from_records(records, input_size=input_size)


def run_loopback(broker, executor, msgs, cfg=None, timeout=30.0):
    """Publish ``msgs`` through a live service; returns (detections by id, stats frames)."""
    cfg = cfg or PipelineConfig(stats_interval_s=0.1)
    host, port = broker.address
    with BrokerClient(host, port) as client:
        client.subscribe(cfg.topic_out)
        client.subscribe(cfg.topic_stats)
        svc = InferenceService(cfg, executor, broker.address).start()
        try:
            assert svc.ready.wait(5)
            assert wait_for(lambda: broker.subscriber_count(cfg.topic_in) >= 1)
            assert wait_for(lambda: broker.subscriber_count(cfg.topic_out) >= 1)
            for m in msgs:
                client.publish(cfg.topic_in, m.to_dict())
            out, stats = {}, []
            deadline = time.monotonic() + timeout
            while len(out) < len(msgs) and time.monotonic() < deadline:
                got = client.recv(timeout=0.2)
                if got is None:
                    continue
                topic, payload = got
                if topic == cfg.topic_out:
                    out[payload["image_id"]] = payload
                else:
                    stats.append(payload)
            # wait for a stats tick that has seen everything
            while time.monotonic() < deadline:
                if any(s.get("type") == "stats" and s["processed"] >= len(out) for s in stats):
                    break
                got = client.recv(timeout=0.2)
                if got is not None and got[0] == cfg.topic_stats:
                    stats.append(got[1])
        finally:
            svc.stop()
        return out, stats, svc
