"""Streaming inference: broker simulator, per-image pipeline, service, drift monitor."""

from .broker import Broker, BrokerClient, BrokerUnavailable, connect_with_retry
from .drift import DriftAlert, DriftState, drift_update
from .messages import DetectionMessage, ImageMessage
from .pipeline import PipelineConfig, pipeline_process
from .service import InferenceService, serve

__all__ = [
    "Broker",
    "BrokerClient",
    "BrokerUnavailable",
    "DetectionMessage",
    "DriftAlert",
    "DriftState",
    "ImageMessage",
    "InferenceService",
    "PipelineConfig",
    "connect_with_retry",
    "drift_update",
    "pipeline_process",
    "serve",
]
