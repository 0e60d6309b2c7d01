"""Empty-shelf detection pipeline tooling.

Synthetic shelf scenes and dataset lints, a pluggable executor contract,
COCO-style mAP/mAR/mAF evaluation, a latency/throughput harness and a
streaming inference service.
"""

from .geometry import BBox, Detection, LetterboxTransform, NormBox, iou, letterbox, nms, unmap_box

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "Detection",
    "LetterboxTransform",
    "NormBox",
    "iou",
    "letterbox",
    "nms",
    "unmap_box",
]
