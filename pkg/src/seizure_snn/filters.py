"""Causal band-pass + notch preprocessing and resampling."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal

from .errors import InvalidBand
from .recording import Recording


@dataclass(frozen=True)
class FilterSpec:
    band_low_hz: float = 1.0
    band_high_hz: float = 80.0
    notch_hz: float = 50.0
    notch_q: float = 30.0
    band_order: int = 4

    def check(self, sample_rate: float) -> None:
        nyquist = sample_rate / 2
        if not 0 < self.band_low_hz < self.band_high_hz < nyquist:
            raise InvalidBand(
                f"need 0 < {self.band_low_hz} < {self.band_high_hz} < {nyquist} Hz (Nyquist)"
            )
        if not self.band_low_hz < self.notch_hz < self.band_high_hz:
            raise InvalidBand(f"notch {self.notch_hz} Hz outside the pass band")
        if self.notch_q <= 0:
            raise InvalidBand("notch quality factor must be positive")
        if self.band_order < 2 or self.band_order % 2:
            raise InvalidBand("band-pass order must be a positive even number")


def design_sos(spec: FilterSpec, sample_rate: float) -> np.ndarray:
    """Second-order sections: Butterworth band-pass followed by an IIR notch."""
    spec.check(sample_rate)
    band = signal.butter(
        spec.band_order // 2,
        [spec.band_low_hz, spec.band_high_hz],
        btype="bandpass",
        output="sos",
        fs=sample_rate,
    )
    b, a = signal.iirnotch(spec.notch_hz, spec.notch_q, fs=sample_rate)
    notch = signal.tf2sos(b, a)
    return np.vstack([band, notch])


def apply_filters(recording: Recording, spec: FilterSpec = FilterSpec()) -> Recording:
    sos = design_sos(spec, recording.sample_rate)
    return recording.with_data(signal.sosfilt(sos, recording.data, axis=1))


class StreamingFilter:
    """Sample-by-sample version of :func:`apply_filters` (same SOS cascade, same state)."""

    def __init__(self, spec: FilterSpec, sample_rate: float, n_channels: int):
        self.sos = design_sos(spec, sample_rate)
        self.zi = np.zeros((self.sos.shape[0], n_channels, 2))

    def __call__(self, sample: np.ndarray) -> np.ndarray:
        """Filter one sample (channels,) or a chunk (channels, n) continuing the stored state."""
        x = np.asarray(sample, float)
        chunk = x if x.ndim == 2 else x[:, None]
        out, self.zi = signal.sosfilt(self.sos, chunk, axis=1, zi=self.zi)
        return out if x.ndim == 2 else out[:, 0]


def resample(recording: Recording, target_hz: float) -> Recording:
    """Polyphase resampling; the FIR stage doubles as the anti-alias filter."""
    if target_hz <= 0:
        raise ValueError("target_hz must be positive")
    if target_hz == recording.sample_rate:
        return recording.with_data(recording.data.copy(), calibration=recording.calibration)
    ratio = Fraction(target_hz / recording.sample_rate).limit_denominator(1000)
    data = signal.resample_poly(recording.data, ratio.numerator, ratio.denominator, axis=1)
    return recording.with_data(data, sample_rate=float(target_hz), record_duration=None)
