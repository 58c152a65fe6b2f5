"""Dataset assembly: recordings -> preprocessed, labeled, encoded trials."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import SpikeRaster, default_step, encode
from .filters import FilterSpec, apply_filters, resample
from .recording import DEFAULT_CHANNELS, Label, rereference_average, segment_trials, select_channels
from .synth import SynthParams, synth_eeg


@dataclass
class SynthCorpusSpec:
    n_recordings: int = 34
    duration_s: float = 60.0
    seizure_s: float = 30.0
    sample_rate: float = 256.0
    window_s: float = 5.0


def synth_recordings(spec: SynthCorpusSpec, seed: int) -> list:
    """Recordings with one window-aligned seizure each (about half the windows ictal)."""
    rng = np.random.default_rng(seed)
    n_windows = int(spec.duration_s // spec.window_s)
    seizure_windows = int(round(spec.seizure_s / spec.window_s))
    out = []
    for k in range(spec.n_recordings):
        first = int(rng.integers(1, max(2, n_windows - seizure_windows)))
        start = first * spec.window_s
        params = SynthParams(
            duration_s=spec.duration_s,
            sample_rate=spec.sample_rate,
            seizures=[(start, start + spec.seizure_s)],
            background_uv=float(rng.uniform(15.0, 25.0)),
        )
        out.append(synth_eeg(params, int(rng.integers(2**31))))
    return out


def preprocess(recording, filter_spec: FilterSpec = FilterSpec(), channels=DEFAULT_CHANNELS,
               target_hz: float | None = 256.0, reref: bool = False):
    if reref:
        recording = rereference_average(recording)
    rec = select_channels(recording, channels)
    if target_hz is not None and target_hz != rec.sample_rate:
        rec = resample(rec, target_hz)
    return apply_filters(rec, filter_spec)


def labeled_trials(recordings, window_s: float = 5.0, overlap_threshold: float = 0.5) -> list:
    trials = []
    for idx, rec in enumerate(recordings):
        for tr in segment_trials(rec, window_s, overlap_threshold):
            trials.append((tr, idx))
    return trials


def split_indices(n: int, train_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    cut = int(round(train_fraction * n))
    return np.sort(order[:cut]), np.sort(order[cut:])


def encode_trials(trials, step, dt: float) -> list:
    return [(encode(tr.data, step, dt), int(tr.label)) for tr in trials]


def fit_step(train_trials, fraction: float = 1.0) -> np.ndarray:
    return default_step([tr.data for tr in train_trials], fraction)


@dataclass
class Corpus:
    train: list  # (SpikeRaster, label)
    test: list
    step: np.ndarray
    train_trials: list  # raw Trials, for streaming
    test_trials: list


def build_corpus(recordings, seed: int, train_fraction: float = 0.8, window_s: float = 5.0,
                 filter_spec: FilterSpec = FilterSpec(), channels=DEFAULT_CHANNELS) -> Corpus:
    pre = [preprocess(r, filter_spec, channels) for r in recordings]
    trials = [tr for tr, _ in labeled_trials(pre, window_s)]
    train_idx, test_idx = split_indices(len(trials), train_fraction, seed)
    train_trials = [trials[i] for i in train_idx]
    test_trials = [trials[i] for i in test_idx]
    step = fit_step(train_trials)
    dt = 1.0 / pre[0].sample_rate
    return Corpus(encode_trials(train_trials, step, dt), encode_trials(test_trials, step, dt),
                  step, train_trials, test_trials)


def class_counts(encoded) -> dict:
    labels = [int(y) for _, y in encoded]
    return {int(Label.INTERICTAL): labels.count(0), int(Label.ICTAL): labels.count(1)}
