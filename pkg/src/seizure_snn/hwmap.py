"""Lowering a float network to the integer execution model and checking resource limits."""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import lif
from .encoding import SpikeRaster
from .errors import DegenerateWeights, ShapeMismatch
from .network import (
    INPUT,
    MAX_HIDDEN,
    MAX_INPUT,
    MAX_OUTPUT,
    READOUT,
    ForwardTrace,
    Network,
    Projection,
)

WEIGHT_MIN, WEIGHT_MAX = -128, 127
MAX_FANOUT = 32
UNREACHABLE = 2**15  # above any saturated 16-bit membrane
FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# Graph extraction


@dataclass
class NeuronGraph:
    n_input: int
    dt: float
    populations: list
    projections: list
    extras: dict = field(default_factory=dict)

    @property
    def offsets(self) -> dict:
        out, k = {}, 0
        for p in self.populations:
            out[p.name] = k
            k += p.size
        return out

    @property
    def neurons(self) -> list:
        recs = []
        for p in self.populations:
            base = self.offsets[p.name]
            for j in range(p.size):
                recs.append({"id": base + j, "population": p.name, "tau_mem": p.tau_mem,
                             "tau_syn": p.tau_syn, "threshold": p.threshold})
        return recs

    @property
    def n_output(self) -> int:
        return sum(p.size for p in self.populations if not p.spiking)

    @property
    def n_hidden(self) -> int:
        return sum(p.size for p in self.populations if p.spiking)

    @property
    def weight_count(self) -> int:
        return int(sum(p.weight.size for p in self.projections))


def extract_graph(network: Network) -> NeuronGraph:
    projs = [replace(p, weight=p.weight.copy()) for p in network.projections]
    extras = {"seed": network.seed, "encoder_step": network.encoder_step, "config": network.config,
              "meta": dict(network.meta)}
    return NeuronGraph(network.n_input, network.dt, list(network.populations), projs, extras)


def graph_to_network(graph: NeuronGraph) -> Network:
    projs = [replace(p, weight=p.weight.copy()) for p in graph.projections]
    e = graph.extras
    return Network(graph.n_input, graph.dt, list(graph.populations), projs, seed=e.get("seed"),
                   encoder_step=e.get("encoder_step"), config=e.get("config"), meta=dict(e.get("meta") or {}))


# ---------------------------------------------------------------------------
# Quantization


@dataclass(frozen=True)
class QPopulation:
    name: str
    size: int
    dash_mem: int
    dash_syn: tuple
    threshold: np.ndarray  # per neuron, int
    bias: np.ndarray  # per neuron, int
    spiking: bool = True

    @property
    def n_syn(self) -> int:
        return len(self.dash_syn)


@dataclass
class QuantizedConfig:
    n_input: int
    dt: float
    populations: list
    projections: list  # Projection with integer weights
    scales: dict  # population -> per-neuron float scale
    spike_cap: int = lif.MAX_SPIKES

    def population(self, name: str) -> QPopulation:
        for p in self.populations:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def n_output(self) -> int:
        return sum(p.size for p in self.populations if not p.spiking)

    @property
    def n_hidden(self) -> int:
        return sum(p.size for p in self.populations if p.spiking)

    @property
    def output_scale(self) -> np.ndarray:
        return np.asarray(self.scales[READOUT], dtype=np.float64)


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _group_max(projs, size: int, per_neuron: bool) -> np.ndarray:
    peak = np.zeros(size)
    for p in projs:
        col = np.abs(p.weight) if p.diagonal else np.abs(p.weight).max(axis=0)
        peak = np.maximum(peak, col)
    return peak if per_neuron else np.full(size, peak.max() if size else 0.0)


def quantize(graph: NeuronGraph, per_neuron: bool = False) -> QuantizedConfig:
    """Scale each destination group so its largest incoming |weight| maps to 127.

    Thresholds and biases get the same scale; time constants become shift
    amounts.  ``per_neuron=True`` picks one scale per destination neuron.
    """
    incoming = {p.name: [] for p in graph.populations}
    for proj in graph.projections:
        incoming[proj.target].append(proj)
    qpops, qprojs, scales = [], [], {}
    for pop in graph.populations:
        peak = _group_max(incoming[pop.name], pop.size, per_neuron)
        if np.any(peak == 0):
            warnings.warn(f"{pop.name}: all incoming weights are zero; using scale 1", DegenerateWeights)
        scale = np.where(peak > 0, WEIGHT_MAX / np.where(peak > 0, peak, 1.0), 1.0)
        scales[pop.name] = scale
        for proj in incoming[pop.name]:
            w = round_half_away(proj.weight * scale)
            qprojs.append(replace(proj, weight=np.clip(w, WEIGHT_MIN, WEIGHT_MAX).astype(np.int64)))
        if pop.spiking:
            thr = np.maximum(1, round_half_away(pop.threshold * scale)).astype(np.int64)
        else:
            thr = np.full(pop.size, UNREACHABLE, dtype=np.int64)
        qpops.append(QPopulation(
            pop.name, pop.size,
            lif.dash_from_tau(pop.tau_mem, graph.dt),
            tuple(lif.dash_from_tau(t, graph.dt) for t in pop.tau_syn),
            thr,
            round_half_away(np.asarray(pop.bias) * scale).astype(np.int64),
            pop.spiking,
        ))
    order = {p.name: k for k, p in enumerate(graph.projections)}
    qprojs.sort(key=lambda p: order[p.name])
    return QuantizedConfig(graph.n_input, graph.dt, qpops, qprojs, scales)


# ---------------------------------------------------------------------------
# Resource validation


@dataclass(frozen=True)
class Violation:
    bound: str
    value: object
    detail: str = ""

    def __str__(self):
        text = f"{self.bound} (got {self.value})"
        return f"{text}: {self.detail}" if self.detail else text


def fanouts(config, hidden_only: bool = False) -> dict:
    """Per-neuron count of non-zero outgoing (target neuron, synapse) connections.

    Keys are population names plus ``"input"``.  With ``hidden_only`` only
    connections onto spiking (hidden) neurons are counted.
    """
    sizes = {p.name: p.size for p in config.populations}
    sizes[INPUT] = config.n_input
    spiking = {p.name: p.spiking for p in config.populations}
    out = {name: np.zeros(n, dtype=np.int64) for name, n in sizes.items()}
    for proj in config.projections:
        if hidden_only and not spiking.get(proj.target, False):
            continue
        nz = proj.weight != 0
        per_src = nz.astype(np.int64) if proj.diagonal else nz.sum(axis=1)
        for src in proj.sources:
            if src in out and out[src].shape == per_src.shape:
                out[src] += per_src
    return out


def validate(config: QuantizedConfig) -> list:
    v = []
    if config.n_input > MAX_INPUT:
        v.append(Violation(f"input > {MAX_INPUT}", config.n_input))
    if config.n_input < 1:
        v.append(Violation("input < 1", config.n_input))
    if config.n_output > MAX_OUTPUT:
        v.append(Violation(f"output > {MAX_OUTPUT}", config.n_output))
    if config.n_hidden > MAX_HIDDEN:
        v.append(Violation(f"hidden > {MAX_HIDDEN}", config.n_hidden))
    if not 1 <= config.spike_cap <= lif.MAX_SPIKES:
        v.append(Violation(f"spike cap > {lif.MAX_SPIKES}", config.spike_cap))

    names = [p.name for p in config.populations]
    position = {name: k for k, name in enumerate(names)}
    sizes = {p.name: p.size for p in config.populations}
    sizes[INPUT] = config.n_input
    if len(set(names)) != len(names) or INPUT in position:
        v.append(Violation("duplicate population names", names))
    if READOUT not in position:
        v.append(Violation("missing readout population", READOUT))
    for p in config.populations:
        if not 0 <= p.dash_mem <= lif.DASH_MAX or any(not 0 <= d <= lif.DASH_MAX for d in p.dash_syn):
            v.append(Violation(f"dash outside [0, {lif.DASH_MAX}]", (p.dash_mem, p.dash_syn), p.name))
        if np.shape(p.threshold) != (p.size,) or np.shape(p.bias) != (p.size,):
            v.append(Violation("threshold/bias shape mismatch", np.shape(p.threshold), p.name))
        elif np.any(np.asarray(p.threshold) < 1):
            v.append(Violation("threshold < 1", int(np.min(p.threshold)), p.name))
        elif np.any(np.abs(p.bias) > lif.STATE_MAX) or np.any(np.asarray(p.threshold) > UNREACHABLE):
            v.append(Violation("threshold/bias outside 16-bit range", p.name))
        if p.n_syn < 1:
            v.append(Violation("population without synapse", p.name))

    spiking = {p.name: p.spiking for p in config.populations}
    for proj in config.projections:
        w = np.asarray(proj.weight)
        if w.size and (w.min() < WEIGHT_MIN or w.max() > WEIGHT_MAX):
            v.append(Violation(f"weight outside [{WEIGHT_MIN}, {WEIGHT_MAX}]", (int(w.min()), int(w.max())), proj.name))
        if proj.target not in position:
            v.append(Violation("unknown projection target", proj.target, proj.name))
            continue
        tgt = config.population(proj.target)
        if not 0 <= proj.synapse < tgt.n_syn:
            v.append(Violation("synapse index out of range", proj.synapse, proj.name))
        for src in proj.sources:
            if src not in sizes:
                v.append(Violation("unknown projection source", src, proj.name))
                continue
            if src != INPUT and position[src] >= position[proj.target]:
                v.append(Violation("projection source not upstream", src, proj.name))
            if src != INPUT and not spiking[src]:
                v.append(Violation("readout neurons cannot project", src, proj.name))
            if src == INPUT and not tgt.spiking:
                v.append(Violation("input weights must target hidden neurons", proj.target, proj.name))
            want = (sizes[src],) if w.ndim == 1 else (sizes[src], tgt.size)
            if w.shape != want or (w.ndim == 1 and sizes[src] != tgt.size):
                v.append(Violation("weight shape mismatch", w.shape, proj.name))

    if not v:
        for name, counts in fanouts(config, hidden_only=True).items():
            if name != INPUT and counts.size and counts.max() > MAX_FANOUT:
                k = int(np.argmax(counts))
                v.append(Violation(f"fanout > {MAX_FANOUT}", int(counts.max()), f"{name}[{k}]"))
    return v


# ---------------------------------------------------------------------------
# Integer simulation


class FixedEngine:
    """Integer-regime stepper; mirrors :class:`network.FloatEngine`."""

    def __init__(self, config: QuantizedConfig):
        self.config = config
        self.order = config.populations
        self.incoming = {p.name: [] for p in config.populations}
        for proj in config.projections:
            self.incoming[proj.target].append(proj)
        self.dash_syn = {p.name: np.array(p.dash_syn, dtype=np.int64)[:, None] for p in self.order}
        self.sat = lif.SaturationCounter()

    def init_state(self, batch: int = 1) -> dict:
        return {
            p.name: (np.zeros((batch, p.size), dtype=np.int64), np.zeros((batch, p.n_syn, p.size), dtype=np.int64))
            for p in self.order
        }

    def step(self, state: dict, x: np.ndarray):
        spikes = {INPUT: np.asarray(x, dtype=np.int64)}
        for pop in self.order:
            v, i_syn = state[pop.name]
            inputs = np.zeros_like(i_syn)
            for proj in self.incoming[pop.name]:
                src = spikes[proj.sources[0]]
                for name in proj.sources[1:]:
                    src = src + spikes[name]
                inputs[:, proj.synapse] += proj.apply(src)
            if pop.spiking:
                v, i_syn, s = lif.fixed_update(
                    v, i_syn, inputs, self.dash_syn[pop.name], pop.dash_mem,
                    pop.threshold, self.sat, self.config.spike_cap, pop.bias,
                )
            else:
                inputs = self.sat(inputs + pop.bias)
                i_syn = self.sat(i_syn - (i_syn >> self.dash_syn[pop.name]) + inputs)
                s = np.zeros_like(v)
            state[pop.name] = (v, i_syn)
            spikes[pop.name] = s
        return spikes, state[READOUT][1].sum(axis=1)


def _check_input(config, counts):
    if counts.shape[-2] != config.n_input:
        raise ShapeMismatch(f"raster has {counts.shape[-2]} channels, config expects {config.n_input}")


def run_quantized_batch(config: QuantizedConfig, counts: np.ndarray, record_spikes: bool = False):
    counts = np.asarray(counts)
    if not np.issubdtype(counts.dtype, np.integer):
        raise ValueError("integer spike counts required")
    _check_input(config, counts)
    engine = FixedEngine(config)
    B, _, T = counts.shape
    state = engine.init_state(B)
    currents = np.zeros((B, config.n_output, T), dtype=np.int64)
    spikes = {p.name: np.zeros((B, p.size, T), dtype=np.int64) for p in config.populations if p.spiking} \
        if record_spikes else None
    for t in range(T):
        s, cur = engine.step(state, counts[:, :, t])
        currents[:, :, t] = cur
        if record_spikes:
            for name in spikes:
                spikes[name][:, :, t] = s[name]
    return currents, spikes, engine.sat.events


@dataclass
class EnergyReport:
    total_synops: int
    spikes_per_layer: dict
    synops_per_inference: float
    saturation_events: int = 0


def count_synops(trace: ForwardTrace, fanout: dict, n_inferences: int = 1, saturation_events: int = 0) -> EnergyReport:
    """One synaptic operation per spike per non-zero outgoing connection."""
    total = 0
    per_layer = {}
    for name, s in trace.spikes.items():
        per_neuron = np.asarray(s).sum(axis=-1)
        per_layer[name] = int(per_neuron.sum())
        if name in fanout:
            total += int(np.dot(per_neuron.astype(np.int64), fanout[name]))
    return EnergyReport(total, per_layer, total / n_inferences, saturation_events)


def simulate_quantized(config: QuantizedConfig, raster: SpikeRaster) -> ForwardTrace:
    counts = np.asarray(raster.counts)[None]
    currents, spikes, sat = run_quantized_batch(config, counts, record_spikes=True)
    trace = ForwardTrace(
        {INPUT: np.asarray(raster.counts, dtype=np.int64), **{k: v[0] for k, v in spikes.items()}},
        currents[0],
        current_scale=config.output_scale,
    )
    trace.energy = count_synops(trace, fanouts(config), saturation_events=sat)
    return trace


# ---------------------------------------------------------------------------
# Deployment artifact (integers only; floats carried as IEEE-754 bit patterns)


def _bits(x: float) -> int:
    return struct.unpack("<q", struct.pack("<d", float(x)))[0]


def _unbits(n: int) -> float:
    return struct.unpack("<d", struct.pack("<q", int(n)))[0]


def quantized_to_dict(config: QuantizedConfig) -> dict:
    return {
        "format": "quantized-config",
        "version": FORMAT_VERSION,
        "n_input": config.n_input,
        "dt_bits": _bits(config.dt),
        "spike_cap": config.spike_cap,
        "populations": [
            {"name": p.name, "size": p.size, "dash_mem": p.dash_mem, "dash_syn": list(p.dash_syn),
             "threshold": [int(t) for t in p.threshold], "bias": [int(b) for b in p.bias],
             "spiking": int(p.spiking), "scale_bits": [_bits(s) for s in config.scales[p.name]]}
            for p in config.populations
        ],
        "projections": [
            {"name": p.name, "sources": list(p.sources), "target": p.target, "synapse": p.synapse,
             "shape": list(p.weight.shape), "weights": [int(w) for w in p.weight.ravel()]}
            for p in config.projections
        ],
    }


def quantized_from_dict(doc: dict) -> QuantizedConfig:
    if doc.get("format") != "quantized-config" or doc.get("version") != FORMAT_VERSION:
        raise ValueError("not a version-1 quantized-config document")
    pops, scales = [], {}
    for p in doc["populations"]:
        pops.append(QPopulation(p["name"], p["size"], p["dash_mem"], tuple(p["dash_syn"]),
                                np.array(p["threshold"], dtype=np.int64), np.array(p["bias"], dtype=np.int64),
                                bool(p["spiking"])))
        scales[p["name"]] = np.array([_unbits(b) for b in p["scale_bits"]])
    projs = [Projection(p["name"], tuple(p["sources"]), p["target"], p["synapse"],
                        np.array(p["weights"], dtype=np.int64).reshape(p["shape"]))
             for p in doc["projections"]]
    return QuantizedConfig(doc["n_input"], _unbits(doc["dt_bits"]), pops, projs, scales, doc["spike_cap"])


def dumps_quantized(config: QuantizedConfig) -> str:
    return json.dumps(quantized_to_dict(config), sort_keys=True, indent=1)


def save_quantized(config: QuantizedConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_quantized(config))


def load_quantized(path) -> QuantizedConfig:
    with open(path) as fh:
        return quantized_from_dict(json.load(fh))
