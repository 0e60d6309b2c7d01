"""Sliding-window drift monitor over per-image detection counts and scores."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .messages import DetectionMessage


@dataclass(frozen=True)
class DriftAlert:
    metric: str
    window_mean: float
    reference: float
    threshold: float
    seen: int

    def to_dict(self) -> dict:
        return {"type": "drift", **self.__dict__}


@dataclass
class DriftState:
    """Reference statistics come from the training distribution."""

    reference_count: float
    count_threshold: float
    window_len: int = 50
    reference_score: float | None = None
    score_threshold: float | None = None
    counts: deque = field(default_factory=deque)
    scores: deque = field(default_factory=deque)
    seen: int = 0
    last_alert_at: int | None = None

    def __post_init__(self) -> None:
        if self.window_len < 2:
            raise ValueError("window_len must be >= 2")
        self.counts = deque(self.counts, maxlen=self.window_len)
        self.scores = deque(self.scores, maxlen=self.window_len)


def drift_update(state: DriftState, msg: DetectionMessage) -> DriftAlert | None:
    """Record one image; alert when a full window drifts past a threshold.

    At most one alert is raised per ``window_len`` images.
    """
    state.counts.append(len(msg.boxes))
    if msg.boxes:
        state.scores.append(sum(d.score for d in msg.boxes) / len(msg.boxes))
    state.seen += 1
    if len(state.counts) < state.window_len:
        return None
    if state.last_alert_at is not None and state.seen - state.last_alert_at < state.window_len:
        return None
    alert = None
    mean_count = sum(state.counts) / len(state.counts)
    if abs(mean_count - state.reference_count) > state.count_threshold:
        alert = DriftAlert("count", mean_count, state.reference_count, state.count_threshold, state.seen)
    elif state.reference_score is not None and state.score_threshold is not None and state.scores:
        mean_score = sum(state.scores) / len(state.scores)
        if abs(mean_score - state.reference_score) > state.score_threshold:
            alert = DriftAlert("score", mean_score, state.reference_score, state.score_threshold, state.seen)
    if alert is not None:
        state.last_alert_at = state.seen
    return alert
