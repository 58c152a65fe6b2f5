"""Recording container, channel selection and trial segmentation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import UnknownChannel

# CHB-MIT bipolar montage (duplicated T8-P8 disambiguated)
CHBMIT_LABELS = [
    "FP1-F7", "F7-T7", "T7-P7", "P7-O1", "FP1-F3", "F3-C3", "C3-P3", "P3-O1",
    "FP2-F4", "F4-C4", "C4-P4", "P4-O2", "FP2-F8", "F8-T8", "T8-P8-0", "P8-O2",
    "FZ-CZ", "CZ-PZ", "P7-T7", "T7-FT9", "FT9-FT10", "FT10-T8", "T8-P8-1",
]
DEFAULT_CHANNELS = ["C3-P3", "C4-P4"]


@dataclass(frozen=True)
class SeizureAnnotation:
    start_s: float
    end_s: float

    def __post_init__(self):
        if not (0 <= self.start_s < self.end_s):
            raise ValueError(f"invalid seizure interval [{self.start_s}, {self.end_s}]")


@dataclass(frozen=True)
class EdfCalibration:
    """Per-channel EDF linear map between digital and physical values."""

    phys_min: float
    phys_max: float
    dig_min: int
    dig_max: int

    @property
    def gain(self) -> float:
        return (self.phys_max - self.phys_min) / (self.dig_max - self.dig_min)


@dataclass
class Recording:
    channel_labels: list
    sample_rate: float
    data: np.ndarray  # channels x samples, microvolts
    annotations: list = field(default_factory=list)
    calibration: Optional[list] = None  # EdfCalibration per channel, set by the EDF reader
    record_duration: Optional[float] = None

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=np.float64))
        self.channel_labels = list(self.channel_labels)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if len(self.channel_labels) != self.data.shape[0]:
            raise ValueError(
                f"{len(self.channel_labels)} labels for {self.data.shape[0]} channel series"
            )
        if self.calibration is not None and len(self.calibration) != self.data.shape[0]:
            raise ValueError("calibration must have one entry per channel")

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate

    def with_data(self, data: np.ndarray, **changes) -> "Recording":
        """Copy with new sample data; EDF calibration no longer applies."""
        changes.setdefault("calibration", None)
        return replace(self, data=data, **changes)


class Label(int, Enum):
    INTERICTAL = 0
    ICTAL = 1


@dataclass
class Trial:
    data: np.ndarray  # channels x samples
    label: Label
    origin_s: float


def select_channels(recording: Recording, labels: Sequence[str]) -> Recording:
    index = {name: i for i, name in enumerate(recording.channel_labels)}
    rows = []
    for name in labels:
        if name not in index:
            raise UnknownChannel(name)
        rows.append(index[name])
    calibration = None
    if recording.calibration is not None:
        calibration = [recording.calibration[i] for i in rows]
    return replace(
        recording,
        channel_labels=list(labels),
        data=recording.data[rows].copy(),
        calibration=calibration,
    )


def rereference_average(recording: Recording) -> Recording:
    """Subtract the instantaneous mean across channels (common average reference)."""
    data = recording.data - recording.data.mean(axis=0, keepdims=True)
    return recording.with_data(data)


def remove_mean(recording: Recording) -> Recording:
    return recording.with_data(recording.data - recording.data.mean(axis=1, keepdims=True))


def _merged_intervals(annotations) -> list:
    spans = sorted((a.start_s, a.end_s) for a in annotations)
    merged = []
    for start, end in spans:
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return merged


def ictal_fraction(annotations, start_s: float, end_s: float) -> float:
    """Fraction of [start_s, end_s) covered by the union of the annotations."""
    covered = 0.0
    for a, b in _merged_intervals(annotations):
        covered += max(0.0, min(b, end_s) - max(a, start_s))
    return covered / (end_s - start_s)


def segment_trials(
    recording: Recording, window_s: float = 5.0, overlap_threshold: float = 0.5
) -> list:
    """Cut consecutive non-overlapping windows; the trailing partial window is dropped."""
    if window_s <= 0:
        raise ValueError("window_s must be positive")
    if not 0.0 <= overlap_threshold <= 1.0:
        raise ValueError("overlap_threshold must lie in [0, 1]")
    width = int(round(window_s * recording.sample_rate))
    trials = []
    for k in range(recording.n_samples // width):
        lo = k * width
        start = lo / recording.sample_rate
        end = (lo + width) / recording.sample_rate
        frac = ictal_fraction(recording.annotations, start, end)
        label = Label.ICTAL if frac >= overlap_threshold else Label.INTERICTAL
        trials.append(Trial(recording.data[:, lo:lo + width].copy(), label, start))
    return trials


def parse_annotations(text: str) -> list:
    """Read a sidecar file: one ``start_s<TAB>end_s`` pair per line."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected start<TAB>end, got {line!r}")
        out.append(SeizureAnnotation(float(parts[0]), float(parts[1])))
    return out


def format_annotations(annotations) -> str:
    return "".join(f"{a.start_s!r}\t{a.end_s!r}\n" for a in annotations)
