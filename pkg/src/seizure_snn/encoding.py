"""Sigma-delta (level-crossing) spike encoding.

Each input channel ``c`` becomes two raster rows: ``2c`` counts upward
interval crossings and ``2c + 1`` downward ones.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteSample

log = logging.getLogger(__name__)

DEFAULT_MAX_PER_STEP = 15


@dataclass
class SpikeRaster:
    counts: np.ndarray  # (2 * channels) x timesteps, non-negative integers
    dt: float

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.ndim != 2:
            raise ValueError("counts must be a channels x timesteps matrix")
        if self.counts.size and self.counts.min() < 0:
            raise ValueError("spike counts must be non-negative")

    @property
    def n_channels(self) -> int:
        return self.counts.shape[0]

    @property
    def n_steps(self) -> int:
        return self.counts.shape[1]


# Crossings within this fraction of a step count as reached, so a signal that
# returns exactly to a grid level is not lost to accumulated rounding.
_TOL = 1e-9


def _crossings(gap: np.ndarray, step: np.ndarray) -> np.ndarray:
    n = np.maximum(0.0, np.floor(gap / step + _TOL))
    n += (gap - n * step) >= step * (1 - _TOL)  # division rounding
    return n


class EncoderState:
    """Per-channel running quantized level; advance one sample at a time."""

    def __init__(self, step, max_per_step: int | None = DEFAULT_MAX_PER_STEP):
        self.step = np.atleast_1d(np.asarray(step, dtype=np.float64))
        if np.any(self.step <= 0):
            raise ValueError("encoder step must be positive")
        self.max_per_step = max_per_step
        self.level = None
        self.clamped = 0  # samples where a channel hit the per-step cap

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Encode one multichannel sample; returns interleaved up/down counts."""
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise NonFiniteSample("encoder input contains NaN or inf")
        step = np.broadcast_to(self.step, x.shape)
        if self.level is None:
            self.level = x.copy()
        up = self._cap(_crossings(x - self.level, step))
        self.level = self.level + up * step
        down = self._cap(_crossings(self.level - x, step))
        self.level = self.level - down * step
        out = np.empty(2 * x.size, dtype=np.int64)
        out[0::2] = up
        out[1::2] = down
        return out

    def _cap(self, n: np.ndarray) -> np.ndarray:
        if self.max_per_step is not None and np.any(n > self.max_per_step):
            if not self.clamped:
                log.warning("sigma-delta jump clamped to %d events per step", self.max_per_step)
            self.clamped += int(np.sum(n > self.max_per_step))
            n = np.minimum(n, self.max_per_step)
        return n


def encode(signal, step, dt: float = 1.0, max_per_step: int | None = DEFAULT_MAX_PER_STEP) -> SpikeRaster:
    """Encode a channels x samples matrix; ``step`` is scalar or per-channel (µV)."""
    signal = np.atleast_2d(np.asarray(signal, dtype=np.float64))
    if not np.all(np.isfinite(signal)):
        raise NonFiniteSample("signal contains NaN or inf")
    state = EncoderState(step, max_per_step)
    counts = np.zeros((2 * signal.shape[0], signal.shape[1]), dtype=np.int64)
    for t in range(signal.shape[1]):
        counts[:, t] = state(signal[:, t])
    return SpikeRaster(counts, dt)


def decode(raster: SpikeRaster, step, initial_level) -> np.ndarray:
    counts = raster.counts
    if counts.shape[0] % 2:
        raise ValueError("raster must have an even number of rows (up/down pairs)")
    net = counts[0::2].astype(np.float64) - counts[1::2]
    step = np.reshape(np.asarray(step, dtype=np.float64), (-1, 1))
    initial = np.reshape(np.asarray(initial_level, dtype=np.float64), (-1, 1))
    return initial + step * np.cumsum(net, axis=1)


def default_step(train_signals, fraction: float = 1.0) -> np.ndarray:
    """Per-channel step = fraction x interquartile range over the training trials."""
    stacked = np.concatenate([np.atleast_2d(s) for s in train_signals], axis=1)
    q75, q25 = np.percentile(stacked, [75, 25], axis=1)
    return fraction * (q75 - q25)


# Event-list serialization: a small text format
#   # sigma-delta raster v1
#   dt <float>
#   shape <rows> <steps>
#   <channel> <timestep> <count>     (one line per non-zero entry)

def dump_raster(raster: SpikeRaster) -> str:
    buf = io.StringIO()
    buf.write("# sigma-delta raster v1\n")
    buf.write(f"dt {raster.dt!r}\n")
    buf.write(f"shape {raster.counts.shape[0]} {raster.counts.shape[1]}\n")
    for ch, t in zip(*np.nonzero(raster.counts)):
        buf.write(f"{ch} {t} {raster.counts[ch, t]}\n")
    return buf.getvalue()


def load_raster(text: str) -> SpikeRaster:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    dt = float(lines[0].split()[1])
    _, rows, steps = lines[1].split()
    counts = np.zeros((int(rows), int(steps)), dtype=np.int64)
    for ln in lines[2:]:
        ch, t, c = map(int, ln.split())
        counts[ch, t] = c
    return SpikeRaster(counts, dt)
