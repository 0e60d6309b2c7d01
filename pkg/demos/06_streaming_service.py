"""
Streaming inference over the broker simulator
=============================================

Start the pub/sub broker, attach the inference service, push a few images
and read back detections plus periodic stats.
"""

import time

from shelfpipe.dataset import ImageRecord
from shelfpipe.detector import OracleExecutor
from shelfpipe.serve import (
    Broker,
    BrokerClient,
    DriftState,
    ImageMessage,
    InferenceService,
    PipelineConfig,
    pipeline_process,
)
from shelfpipe.synthgen import SceneParams, generate

p = SceneParams(seed=9, empty_prob=0.35)
msgs, records = [], []
for i in range(10):
    img, gt = generate(p, i)
    msgs.append(ImageMessage.from_array(f"cam_{i}", img))
    records.append(ImageRecord(f"cam_{i}", "", p.img_w, p.img_h, "test", tuple(gt)))
executor = OracleExecutor.from_records(records, input_size=320)

cfg = PipelineConfig(stats_interval_s=0.2)
with Broker() as broker:
    with BrokerClient(*broker.address) as client:
        client.subscribe(cfg.topic_out)
        client.subscribe(cfg.topic_stats)
        drift = DriftState(reference_count=1.0, count_threshold=1.0, window_len=5)
        with InferenceService(cfg, executor, broker.address, drift=drift) as svc:
            svc.ready.wait(5)
            while broker.subscriber_count(cfg.topic_in) == 0:
                time.sleep(0.01)
            for m in msgs:
                client.publish(cfg.topic_in, m.to_dict())
            got = {}
            while len(got) < len(msgs):
                topic, payload = client.recv(timeout=5)
                if topic == cfg.topic_out:
                    got[payload["image_id"]] = payload
                elif payload.get("type") == "drift":
                    print("drift alert:", payload)
            time.sleep(0.3)
        while (frame := client.recv(timeout=0.1)) is not None:
            if frame[1].get("type") == "stats":
                last_stats = frame[1]

for m in msgs:
    direct = pipeline_process(m, executor)
    assert got[m.image_id]["boxes"] == direct.to_dict()["boxes"]
    print(m.image_id, len(got[m.image_id]["boxes"]), "boxes", f"{got[m.image_id]['latency_ms']:.2f}ms")
print("stats:", last_stats)
