"""Sample-by-sample detection with alarm post-processing and latency measurement."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .encoding import DEFAULT_MAX_PER_STEP, EncoderState
from .errors import ShapeMismatch
from .hwmap import FixedEngine, QuantizedConfig, run_quantized_batch
from .network import FloatEngine, Network, forward_batch

VOTES = 4
SILENT, ALARM = "silent", "alarm"


@dataclass(frozen=True)
class AlarmState:
    status: str = SILENT
    consecutive_positive: int = 0
    consecutive_negative: int = 0


def alarm_update(state: AlarmState, decision: int) -> AlarmState:
    """Enter or leave the alarm only after ``VOTES`` identical decisions in a row."""
    if decision:
        pos, neg = min(state.consecutive_positive + 1, VOTES), 0
    else:
        pos, neg = 0, min(state.consecutive_negative + 1, VOTES)
    if state.status == SILENT and pos == VOTES:
        return AlarmState(ALARM)
    if state.status == ALARM and neg == VOTES:
        return AlarmState(SILENT)
    return AlarmState(state.status, pos, neg)


@dataclass
class DetectionTimeline:
    entries: list = field(default_factory=list)  # (time_s, decision, status)
    transitions: list = field(default_factory=list)  # (time_s, new status)
    end_s: float = 0.0

    def alarm_intervals(self) -> list:
        out, start = [], None
        for t, status in self.transitions:
            if status == ALARM:
                start = t
            elif start is not None:
                out.append((start, t))
                start = None
        if start is not None:
            out.append((start, self.end_s))
        return out

    def records(self):
        for t, d, s in self.entries:
            yield {"time_s": t, "decision": int(d), "alarm": int(s == ALARM)}

    def dump(self, fh) -> None:
        for rec in self.records():
            fh.write(json.dumps(rec) + "\n")


class StreamEngine:
    """Continuous inference over a multichannel sample stream.

    Holds the encoder levels, the network state (float or integer), the
    running peak of the readout currents over the current decision period,
    and the alarm state; memory does not grow with stream length.
    """

    def __init__(self, model, encoder_step, decision_period_s: float = 0.5,
                 max_per_step: int | None = DEFAULT_MAX_PER_STEP):
        self.model = model
        self.dt = model.dt
        steps = decision_period_s / self.dt
        if steps < 1 or abs(steps - round(steps)) > 1e-9:
            raise ValueError(f"decision period {decision_period_s} s is not a whole number of dt = {self.dt} s")
        self.period_steps = int(round(steps))
        self.decision_period_s = decision_period_s
        self.encoder = EncoderState(encoder_step, max_per_step)
        if model.n_input % 2:
            raise ShapeMismatch("model input must be up/down channel pairs")
        self.n_channels = model.n_input // 2
        if isinstance(model, QuantizedConfig):
            self.engine = FixedEngine(model)
            self.scale = model.output_scale
        else:
            self.engine = FloatEngine(model)
            self.scale = None
        self.state = self.engine.init_state(1)
        self.alarm = AlarmState()
        self.peak = None
        self.n_in_period = 0
        self.n_decisions = 0

    def _advance(self, counts: np.ndarray) -> np.ndarray:
        if isinstance(self.engine, FixedEngine):
            _, cur = self.engine.step(self.state, counts[None].astype(np.int64))
        else:
            _, _, cur = self.engine.step(self.state, counts[None].astype(np.float64))
        return cur[0]

    def stream_step(self, sample):
        """Feed one multichannel sample; returns ``(time_s, decision, AlarmState)`` at period ends."""
        sample = np.asarray(sample, dtype=np.float64)
        if sample.shape != (self.n_channels,):
            raise ShapeMismatch(f"sample has shape {sample.shape}, expected ({self.n_channels},)")
        current = self._advance(self.encoder(sample))
        self.peak = current.copy() if self.peak is None else np.maximum(self.peak, current)
        self.n_in_period += 1
        if self.n_in_period < self.period_steps:
            return None
        peaks = self.peak.astype(np.float64)
        if self.scale is not None:
            peaks = peaks / self.scale
        decision = int(np.argmax(peaks))
        self.alarm = alarm_update(self.alarm, decision)
        self.n_decisions += 1
        self.peak, self.n_in_period = None, 0
        return self.n_decisions * self.decision_period_s, decision, self.alarm


def replay(recording, engine: StreamEngine) -> DetectionTimeline:
    if recording.data.shape[0] != engine.n_channels:
        raise ShapeMismatch(f"recording has {recording.data.shape[0]} channels, engine expects {engine.n_channels}")
    timeline = DetectionTimeline(end_s=recording.duration_s)
    status = engine.alarm.status
    for t in range(recording.n_samples):
        out = engine.stream_step(recording.data[:, t])
        if out is None:
            continue
        time_s, decision, alarm = out
        timeline.entries.append((time_s, decision, alarm.status))
        if alarm.status != status:
            timeline.transitions.append((time_s, alarm.status))
            status = alarm.status
    return timeline


def batch_decisions(model, counts: np.ndarray, period_steps: int) -> np.ndarray:
    """Whole-raster forward pass followed by per-period peak extraction."""
    counts = np.asarray(counts)[None]
    if isinstance(model, QuantizedConfig):
        currents, _, _ = run_quantized_batch(model, counts.astype(np.int64))
        currents = currents[0].astype(np.float64)
        scale = model.output_scale[:, None]
    else:
        currents = forward_batch(model, counts.astype(np.float64), record_spikes=False)[0][0]
        scale = 1.0
    n = currents.shape[1] // period_steps
    out = []
    for k in range(n):
        window = currents[:, k * period_steps:(k + 1) * period_steps]
        out.append(int(np.argmax(window.max(axis=1) / scale)))
    return np.array(out, dtype=int)


@dataclass
class LatencyStat:
    latencies: list  # seconds or None (not detected), one per positive trial
    false_positive_times: list  # seconds or None, one per negative trial
    decision_period_s: float = 0.5

    @property
    def detected(self) -> list:
        return [x for x in self.latencies if x is not None]

    @property
    def median(self):
        return float(np.median(self.detected)) if self.detected else None

    @property
    def detection_rate(self):
        return len(self.detected) / len(self.latencies) if self.latencies else None

    @property
    def false_positive_rate(self):
        if not self.false_positive_times:
            return None
        return sum(x is not None for x in self.false_positive_times) / len(self.false_positive_times)

    def as_dict(self) -> dict:
        return {"median_s": self.median, "detection_rate": self.detection_rate,
                "false_positive_rate": self.false_positive_rate, "n_positive": len(self.latencies),
                "n_negative": len(self.false_positive_times), "decision_period_s": self.decision_period_s}


def first_positive_time(engine: StreamEngine, data: np.ndarray):
    for t in range(data.shape[1]):
        out = engine.stream_step(data[:, t])
        if out is not None and out[1] == 1:
            return out[0]
    return None


def measure_latency(engine_factory, trials) -> LatencyStat:
    """``trials``: (channels x samples data, label); positives have onset at t = 0."""
    latencies, false_pos = [], []
    period = None
    for data, label in trials:
        engine = engine_factory()
        period = engine.decision_period_s
        t = first_positive_time(engine, np.asarray(data))
        (latencies if int(label) == 1 else false_pos).append(t)
    return LatencyStat(latencies, false_pos, period if period is not None else math.nan)
