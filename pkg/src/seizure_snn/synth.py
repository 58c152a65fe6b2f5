"""Labeled surrogate EEG for desk-scale experiments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .recording import CHBMIT_LABELS, DEFAULT_CHANNELS, Recording, SeizureAnnotation

ICTAL_BAND = (3.0, 12.0)


@dataclass
class SynthParams:
    duration_s: float = 60.0
    n_channels: int = 2
    sample_rate: float = 256.0
    seizures: list = field(default_factory=list)  # (start_s, end_s) pairs
    background_uv: float = 20.0  # RMS of the 1/f background
    ictal_ratio: float = 3.0  # ictal / background RMS inside ICTAL_BAND
    line_noise_uv: float = 4.0  # 50 Hz mains pickup
    channel_labels: list | None = None

    def labels(self) -> list:
        if self.channel_labels is not None:
            return list(self.channel_labels)
        if self.n_channels == len(DEFAULT_CHANNELS):
            return list(DEFAULT_CHANNELS)
        if self.n_channels <= len(CHBMIT_LABELS):
            return CHBMIT_LABELS[: self.n_channels]
        return [f"CH{i}" for i in range(self.n_channels)]


def pink_noise(rng: np.random.Generator, n: int, fs: float, band=(0.5, 70.0)) -> np.ndarray:
    """Unit-RMS noise with a 1/f power spectrum restricted to ``band``."""
    freqs = np.fft.rfftfreq(n, 1 / fs)
    spectrum = rng.standard_normal(freqs.size) + 1j * rng.standard_normal(freqs.size)
    gain = np.zeros_like(freqs)
    keep = (freqs >= band[0]) & (freqs <= band[1])
    gain[keep] = 1 / np.sqrt(freqs[keep])
    x = np.fft.irfft(spectrum * gain, n)
    return x / x.std()


def band_rms(x: np.ndarray, fs: float, band=ICTAL_BAND) -> float:
    """RMS of the FFT-masked band component (periodogram energy in the band)."""
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.size, 1 / fs)
    spec[(freqs < band[0]) | (freqs > band[1])] = 0
    return float(np.sqrt(np.mean(np.fft.irfft(spec, x.size) ** 2)))


def _burst(rng, n: int, fs: float) -> np.ndarray:
    """Rhythmic spike-wave-like discharge with a slow downward chirp."""
    t = np.arange(n) / fs
    f0 = rng.uniform(5.0, 11.0)
    f1 = max(ICTAL_BAND[0], f0 - rng.uniform(0.0, 2.0))
    freq = np.linspace(f0, f1, n)
    phase = 2 * np.pi * np.cumsum(freq) / fs + rng.uniform(0, 2 * np.pi)
    wave = np.sin(phase) + 0.35 * np.sin(2 * phase + 0.5)
    envelope = 1 + 0.2 * np.sin(2 * np.pi * 0.3 * t + rng.uniform(0, 2 * np.pi))
    return wave * envelope


def synth_eeg(params: SynthParams, seed: int) -> Recording:
    rng = np.random.default_rng(seed)
    fs = params.sample_rate
    n = int(round(params.duration_s * fs))
    t = np.arange(n) / fs
    annotations = [SeizureAnnotation(float(a), float(b)) for a, b in params.seizures]

    data = np.empty((params.n_channels, n))
    for ch in range(params.n_channels):
        background = params.background_uv * rng.uniform(0.8, 1.2) * pink_noise(rng, n, fs)
        mains = params.line_noise_uv * np.sin(2 * np.pi * 50.0 * t + rng.uniform(0, 2 * np.pi))
        x = background + mains
        ref = band_rms(background, fs)
        for ann in annotations:
            lo = int(round(ann.start_s * fs))
            hi = min(n, int(round(ann.end_s * fs)))
            if hi <= lo:
                continue
            burst = _burst(rng, hi - lo, fs)
            # scale the burst's in-band RMS to ictal_ratio x the background's, with some spread
            target = params.ictal_ratio * rng.uniform(1.0, 1.4) * ref
            x[lo:hi] += burst * (target / band_rms(burst, fs))
        data[ch] = x
    return Recording(params.labels(), fs, data, annotations)
