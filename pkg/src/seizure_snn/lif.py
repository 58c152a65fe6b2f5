"""Leaky integrate-and-fire neurons with exponential synapses.

Two regimes share the same update order (synapse, membrane, spike, reset):

* float: exact per-step exponential decay, ``x *= exp(-dt / tau)``
* fixed: 16-bit saturating integers with bit-shift decay, ``x -= x >> dash``

Both emit up to ``MAX_SPIKES`` events per step and reset subtractively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAX_SPIKES = 31
STATE_MAX = 2**15 - 1
DASH_MAX = 15


@dataclass(frozen=True)
class LifParams:
    tau_mem: float
    tau_syn: float
    threshold: float = 0.6
    v_reset: float = 0.0
    dt: float = 1 / 256
    bias: float = 0.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.tau_mem < self.dt or self.tau_syn < self.dt:
            raise ValueError(f"time constants must be >= dt ({self.dt}); got {self.tau_mem}, {self.tau_syn}")
        if not self.threshold > self.v_reset:
            raise ValueError("threshold must exceed v_reset")

    @property
    def alpha(self) -> float:
        """Synaptic decay factor per step."""
        return math.exp(-self.dt / self.tau_syn)

    @property
    def beta(self) -> float:
        """Membrane decay factor per step."""
        return math.exp(-self.dt / self.tau_mem)


@dataclass(frozen=True)
class LifStateF:
    v_mem: float = 0.0
    i_syn: float = 0.0


@dataclass(frozen=True)
class LifStateQ:
    v_mem: int = 0
    i_syn: int = 0
    dash_mem: int = 0
    dash_syn: int = 0

    def __post_init__(self):
        for name in ("dash_mem", "dash_syn"):
            if not 0 <= getattr(self, name) <= DASH_MAX:
                raise ValueError(f"{name} must lie in [0, {DASH_MAX}]")


def spike_count_float(v, threshold, cap=MAX_SPIKES):
    """floor(v / threshold) clamped to [0, cap]; zero below threshold."""
    return np.where(v >= threshold, np.clip(np.floor(v / threshold), 0, cap), 0.0)


def float_update(v, i_syn, inputs, alpha, beta, threshold, v_reset=0.0, bias=0.0, cap=MAX_SPIKES):
    """Vectorized float step.

    ``i_syn`` and ``inputs`` carry a synapse axis just before the neuron axis
    (``(..., n_syn, n)``); ``alpha`` broadcasts against it.  Returns
    ``(v, i_syn, spikes, v_pre)`` where ``v_pre`` is the membrane before reset.
    """
    i_syn = i_syn * alpha + inputs
    v_pre = v * beta + i_syn.sum(axis=-2) + bias
    spikes = spike_count_float(v_pre, threshold, cap)
    if np.all(np.isfinite(threshold)):
        v = v_pre - spikes * (threshold - v_reset)
    else:  # an infinite threshold never fires; avoid 0 * inf
        with np.errstate(invalid="ignore"):
            v = v_pre - np.where(spikes > 0, spikes * (threshold - v_reset), 0.0)
    return v, i_syn, spikes, v_pre


def lif_step_float(state: LifStateF, input_current: float, params: LifParams):
    v, i, s, _ = float_update(
        np.array([state.v_mem], dtype=np.float64),
        np.array([[state.i_syn]], dtype=np.float64),
        np.array([[input_current]], dtype=np.float64),
        params.alpha,
        params.beta,
        params.threshold,
        params.v_reset,
        params.bias,
    )
    return LifStateF(float(v[0]), float(i[0, 0])), int(s[0])


class SaturationCounter:
    """Tally of values clipped to the 16-bit state range."""

    def __init__(self):
        self.events = 0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        over = np.abs(x) > STATE_MAX
        if over.any():
            self.events += int(over.sum())
            x = np.clip(x, -STATE_MAX, STATE_MAX)
        return x


def fixed_update(v, i_syn, inputs, dash_syn, dash_mem, threshold, sat: SaturationCounter, cap=MAX_SPIKES, bias=0):
    """Vectorized integer step; same array layout as :func:`float_update`.

    All arrays are int64 holding 16-bit values; every intermediate result is
    saturated to +-(2**15 - 1).
    """
    inputs = sat(inputs)
    i_syn = sat(i_syn - (i_syn >> dash_syn) + inputs)
    v = sat(v - (v >> dash_mem) + sat(i_syn.sum(axis=-2)) + bias)
    spikes = np.where(v >= threshold, np.minimum(cap, v // threshold), 0)
    v = v - spikes * threshold
    return v, i_syn, spikes


def lif_step_fixed(state: LifStateQ, weighted_input: int, threshold_q: int, sat: SaturationCounter | None = None):
    sat = sat if sat is not None else SaturationCounter()
    v, i, s = fixed_update(
        np.array([state.v_mem], dtype=np.int64),
        np.array([[state.i_syn]], dtype=np.int64),
        np.array([[weighted_input]], dtype=np.int64),
        state.dash_syn,
        state.dash_mem,
        int(threshold_q),
        sat,
    )
    return LifStateQ(int(v[0]), int(i[0, 0]), state.dash_mem, state.dash_syn), int(s[0])


def dash_from_tau(tau: float, dt: float) -> int:
    """Bit-shift amount approximating ``exp(-dt/tau)`` by ``1 - 2**-dash``."""
    dash = math.floor(math.log2(tau / dt) + 0.5)
    return int(min(DASH_MAX, max(0, dash)))


def shift_decay(dash: int) -> float:
    return 1.0 - 2.0 ** (-dash)


def hw_tau(dash: int, dt: float) -> float:
    """Time constant whose exponential decay equals the bit-shift decay exactly."""
    if not 1 <= dash <= DASH_MAX:
        raise ValueError(f"dash must lie in [1, {DASH_MAX}] for a finite time constant")
    return -dt / math.log(shift_decay(dash))
