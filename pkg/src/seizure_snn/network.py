"""WaveSense topology built from LIF populations and weight projections.

A network is an ordered list of populations plus the projections feeding
them.  Every projection lists one or more *source* populations whose spike
counts are summed before the weights are applied; that is how the residual
stream of a block (input layer plus the residual spikes of all earlier
blocks) reaches the dilated layer of the next block.

Per block ``b`` with ``C`` channels::

    u_b -> (two diagonal synapses, taus dilation_taus[2b], [2b+1]) -> b.dil (C LIF)
    b.dil -> dense C x C -> b.res (C LIF);  u_{b+1} = u_b + b.res spikes
    b.dil -> dense C x R -> ro.hidden       (skip path, summed over blocks)

with ``u_0`` the spiking input layer and ``ro.hidden -> ro.out`` a dense
readout into non-spiking integrators whose synaptic currents are the class
scores.  All projections act within the same time step.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import lif
from .encoding import SpikeRaster
from .errors import ConfigViolation, ShapeMismatch

INPUT = "input"
READOUT = "ro.out"
READOUT_BIAS = "ro.out.bias"  # parameter key for the per-class readout bias
FORMAT_VERSION = 1

MAX_INPUT = 16
MAX_OUTPUT = 8
MAX_HIDDEN = 1000


@dataclass(frozen=True)
class Population:
    name: str
    size: int
    tau_mem: float
    tau_syn: tuple
    threshold: float
    v_reset: float = 0.0
    bias: float = 0.0
    spiking: bool = True

    @property
    def n_syn(self) -> int:
        return len(self.tau_syn)


@dataclass
class Projection:
    name: str
    sources: tuple
    target: str
    synapse: int
    weight: np.ndarray  # (n_src, n_tgt), or (n,) for a one-to-one (diagonal) projection

    @property
    def diagonal(self) -> bool:
        return self.weight.ndim == 1

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x * self.weight if self.diagonal else x @ self.weight


@dataclass
class WaveSenseConfig:
    n_input_channels: int = 4
    n_classes: int = 2
    n_blocks: int = 4
    neurons_per_block: int = 16
    dilation_taus: list | None = None  # 2 per block; default dash b+1, b+2 (about 2, 4, 8 ... dt)
    readout_hidden: int = 16
    dt: float = 1 / 256
    # time constants sit exactly on bit-shift decays so the fixed-point engine
    # runs the same dynamics as the float model
    tau_mem: float = lif.hw_tau(1, 1 / 256)
    tau_syn: float = lif.hw_tau(1, 1 / 256)
    tau_out: float = lif.hw_tau(6, 1 / 256)  # about 0.25 s, smooths the per-period peak
    threshold: float = 0.6
    v_reset: float = 0.0
    bias: float = 0.0

    def taus(self) -> list:
        if self.dilation_taus is not None:
            return list(self.dilation_taus)
        out = []
        for b in range(self.n_blocks):
            out += [lif.hw_tau(min(b + 1, lif.DASH_MAX), self.dt), lif.hw_tau(min(b + 2, lif.DASH_MAX), self.dt)]
        return out

    @property
    def n_hidden(self) -> int:
        return self.neurons_per_block * (1 + 2 * self.n_blocks) + self.readout_hidden

    def check(self) -> None:
        if self.n_input_channels < 1 or self.n_input_channels > MAX_INPUT:
            raise ConfigViolation(f"input channels {self.n_input_channels} not in [1, {MAX_INPUT}]")
        if self.n_classes < 2 or self.n_classes > MAX_OUTPUT:
            raise ConfigViolation(f"classes {self.n_classes} not in [2, {MAX_OUTPUT}]")
        if self.n_hidden > MAX_HIDDEN:
            raise ConfigViolation(f"hidden neurons {self.n_hidden} > {MAX_HIDDEN}")
        if len(self.taus()) != 2 * self.n_blocks:
            raise ConfigViolation(
                f"dilation_taus needs exactly 2 entries per block ({2 * self.n_blocks}), got {len(self.taus())}"
            )
        if self.n_blocks < 0 or self.neurons_per_block < 1 or self.readout_hidden < 1:
            raise ConfigViolation("block, channel and readout sizes must be positive")
        # time constants / threshold sanity (raises ValueError on violation)
        for tau in [self.tau_mem, self.tau_syn, self.tau_out, *self.taus()]:
            lif.LifParams(self.tau_mem, tau, self.threshold, self.v_reset, self.dt, self.bias)

    def lif_params(self) -> lif.LifParams:
        return lif.LifParams(self.tau_mem, self.tau_syn, self.threshold, self.v_reset, self.dt, self.bias)


@dataclass
class Network:
    n_input: int
    dt: float
    populations: list
    projections: list
    seed: int | None = None
    encoder_step: list | None = None
    config: WaveSenseConfig | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._check_topology()

    def _check_topology(self):
        names = [p.name for p in self.populations]
        if len(set(names)) != len(names) or INPUT in names:
            raise ConfigViolation("population names must be unique and not 'input'")
        sizes = {p.name: p.size for p in self.populations}
        sizes[INPUT] = self.n_input
        order = {name: k for k, name in enumerate(names)}
        for proj in self.projections:
            if proj.target not in order:
                raise ConfigViolation(f"{proj.name}: unknown target {proj.target!r}")
            tgt = self.population(proj.target)
            if not 0 <= proj.synapse < tgt.n_syn:
                raise ConfigViolation(f"{proj.name}: synapse {proj.synapse} out of range")
            for src in proj.sources:
                if src not in sizes:
                    raise ConfigViolation(f"{proj.name}: unknown source {src!r}")
                if src != INPUT and order[src] >= order[proj.target]:
                    raise ConfigViolation(f"{proj.name}: source {src!r} is not upstream of {proj.target!r}")
                want = (sizes[src],) if proj.diagonal else (sizes[src], tgt.size)
                if proj.diagonal and sizes[src] != tgt.size:
                    raise ConfigViolation(f"{proj.name}: one-to-one projection between unequal layers")
                if proj.weight.shape != want:
                    raise ConfigViolation(f"{proj.name}: weight shape {proj.weight.shape} != {want}")
            if not np.all(np.isfinite(proj.weight)):
                raise ConfigViolation(f"{proj.name}: non-finite weights")

    def population(self, name: str) -> Population:
        for p in self.populations:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def readout(self) -> Population:
        return self.population(READOUT)

    @property
    def n_classes(self) -> int:
        return self.readout.size

    @property
    def n_hidden(self) -> int:
        return sum(p.size for p in self.populations if p.spiking)

    @property
    def weight_count(self) -> int:
        return int(sum(p.weight.size for p in self.projections))

    def weights(self) -> dict:
        return {p.name: p.weight for p in self.projections}

    def params(self) -> dict:
        """Trainable parameters: projection weights plus the readout bias."""
        return {**self.weights(), READOUT_BIAS: np.asarray(self.readout.bias, dtype=np.float64)}

    def with_weights(self, weights: dict) -> "Network":
        """Copy with new weights; a ``READOUT_BIAS`` entry replaces the readout bias."""
        projs = [replace(p, weight=np.array(weights.get(p.name, p.weight), dtype=np.float64)) for p in self.projections]
        pops = self.populations
        if READOUT_BIAS in weights:
            bias = tuple(float(b) for b in np.asarray(weights[READOUT_BIAS]).ravel())
            if len(bias) != self.n_classes or not all(math.isfinite(b) for b in bias):
                raise ConfigViolation("readout bias needs one finite value per class")
            pops = [replace(p, bias=bias) if p.name == READOUT else p for p in pops]
        return replace(self, populations=pops, projections=projs)

    def with_populations(self, **changes) -> "Network":
        """Copy with population fields overridden, e.g. ``threshold=...`` for spiking layers."""
        pops = [replace(p, **changes) if p.spiking else p for p in self.populations]
        return replace(self, populations=pops, projections=[replace(p, weight=p.weight.copy()) for p in self.projections])


def _uniform(rng, fan_in: int, shape) -> np.ndarray:
    bound = 1 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_network(config: WaveSenseConfig, seed: int = 0) -> Network:
    config.check()
    rng = np.random.default_rng(seed)
    C, R, K = config.neurons_per_block, config.readout_hidden, config.n_classes
    taus = config.taus()

    def pop(name, size, tau_syn, **kw):
        return Population(
            name, size, config.tau_mem, tuple(tau_syn), config.threshold, config.v_reset, config.bias, **kw
        )

    pops = [pop("in", C, [config.tau_syn])]
    projs = [Projection("w_in", (INPUT,), "in", 0, _uniform(rng, config.n_input_channels, (config.n_input_channels, C)))]
    residual = ("in",)
    for b in range(config.n_blocks):
        dil, res = f"b{b}.dil", f"b{b}.res"
        pops.append(pop(dil, C, taus[2 * b:2 * b + 2]))
        pops.append(pop(res, C, [config.tau_syn]))
        # fan-in: every residual source reaches both synapses of a neuron
        for k in range(2):
            projs.append(Projection(f"b{b}.w_dil{k}", residual, dil, k, _uniform(rng, 2 * len(residual), (C,))))
        projs.append(Projection(f"b{b}.w_res", (dil,), res, 0, _uniform(rng, C, (C, C))))
        residual = residual + (res,)
    pops.append(pop("ro.hidden", R, [config.tau_syn]))
    for b in range(config.n_blocks):
        # readout fan-in sums over all blocks' skip projections
        projs.append(
            Projection(f"b{b}.w_skip", (f"b{b}.dil",), "ro.hidden", 0, _uniform(rng, C * config.n_blocks, (C, R)))
        )
    pops.append(
        Population(READOUT, K, config.tau_mem, (config.tau_out,), math.inf, 0.0, (0.0,) * K, spiking=False)
    )
    projs.append(Projection("w_out", ("ro.hidden",), READOUT, 0, _uniform(rng, R, (R, K))))
    return Network(config.n_input_channels, config.dt, pops, projs, seed=seed, config=config)


# ---------------------------------------------------------------------------
# Simulation


@dataclass
class ForwardTrace:
    spikes: dict  # population -> (n, T) spike counts
    readout_currents: np.ndarray  # n_classes x T
    current_scale: np.ndarray | None = None  # per class, for integer traces
    energy: object = None

    @property
    def spike_totals(self) -> dict:
        return {name: int(s.sum()) for name, s in self.spikes.items()}

    @property
    def n_steps(self) -> int:
        return self.readout_currents.shape[1]


def incoming(network) -> dict:
    table = {p.name: [] for p in network.populations}
    for proj in network.projections:
        table[proj.target].append(proj)
    return table


def _soft_step(x):
    return np.where(x < 0, 1 / (1 - x), 2 - 1 / (1 + x))


def soft_spikes(v, threshold, slope, cap: int = lif.MAX_SPIKES):
    """Smooth spike count whose derivative is exactly the multi-spike surrogate.

    The count floor(v / threshold) clipped to ``cap`` is a sum of ``cap``
    steps at threshold, 2 x threshold, ...; each step is smoothed separately.
    """
    out = np.zeros_like(v)
    for k in range(1, cap + 1):
        out += _soft_step(slope * (v - k * threshold))
    return out


class FloatEngine:
    """Float-regime stepper over a batch of independent streams.

    ``soft_slope`` replaces the spike count with :func:`soft_spikes`; it is
    only used by the gradient checker.
    """

    def __init__(self, network: Network, soft_slope: float | None = None):
        self.network = network
        self.order = network.populations
        self.incoming = incoming(network)
        self.alpha = {p.name: np.array([math.exp(-network.dt / t) for t in p.tau_syn])[:, None] for p in self.order}
        self.beta = {p.name: math.exp(-network.dt / p.tau_mem) for p in self.order}
        self.soft_slope = soft_slope

    def init_state(self, batch: int = 1) -> dict:
        return {
            p.name: (np.zeros((batch, p.size)), np.zeros((batch, p.n_syn, p.size)))
            for p in self.order
        }

    def step(self, state: dict, x: np.ndarray):
        """Advance one dt. ``x`` is (batch, n_input) spike counts.

        Returns ``(spikes, v_pre, currents)``; ``state`` is updated in place.
        """
        spikes = {INPUT: x}
        v_pre_all = {}
        for pop in self.order:
            v, i_syn = state[pop.name]
            inputs = np.zeros_like(i_syn)
            for proj in self.incoming[pop.name]:
                src = spikes[proj.sources[0]]
                for name in proj.sources[1:]:
                    src = src + spikes[name]
                inputs[:, proj.synapse] += proj.apply(src)
            if not pop.spiking:
                # readout integrator: only the synaptic current matters; the
                # per-class bias feeds the current so silence has a resting class
                i_syn = i_syn * self.alpha[pop.name] + inputs + np.asarray(pop.bias)
                s = v_pre = np.zeros_like(v)
            elif self.soft_slope is not None:
                i_syn = i_syn * self.alpha[pop.name] + inputs
                v_pre = v * self.beta[pop.name] + i_syn.sum(axis=1) + pop.bias
                s = soft_spikes(v_pre, pop.threshold, self.soft_slope)
                v = v_pre - s * (pop.threshold - pop.v_reset)
            else:
                v, i_syn, s, v_pre = lif.float_update(
                    v, i_syn, inputs, self.alpha[pop.name], self.beta[pop.name],
                    pop.threshold, pop.v_reset, pop.bias,
                )
            state[pop.name] = (v, i_syn)
            spikes[pop.name] = s
            v_pre_all[pop.name] = v_pre
        currents = state[READOUT][1].sum(axis=1)
        return spikes, v_pre_all, currents


def _check_input(network, counts: np.ndarray):
    if counts.shape[-2] != network.n_input:
        raise ShapeMismatch(f"raster has {counts.shape[-2]} channels, network expects {network.n_input}")


def forward_batch(network: Network, counts: np.ndarray, record_spikes: bool = True):
    """Run (batch, channels, T) rasters; returns readout currents (batch, classes, T) and spikes."""
    counts = np.asarray(counts, dtype=np.float64)
    _check_input(network, counts)
    engine = FloatEngine(network)
    B, _, T = counts.shape
    state = engine.init_state(B)
    currents = np.zeros((B, network.n_classes, T))
    spikes = {p.name: np.zeros((B, p.size, T)) for p in network.populations if p.spiking} if record_spikes else None
    for t in range(T):
        s, _, cur = engine.step(state, counts[:, :, t])
        currents[:, :, t] = cur
        if record_spikes:
            for name in spikes:
                spikes[name][:, :, t] = s[name]
    return currents, spikes


def forward(network: Network, raster: SpikeRaster) -> ForwardTrace:
    currents, spikes = forward_batch(network, raster.counts[None])
    return ForwardTrace({k: v[0] for k, v in spikes.items()}, currents[0])


def readout_peaks(trace: ForwardTrace) -> np.ndarray:
    peaks = trace.readout_currents.max(axis=1).astype(np.float64)
    if trace.current_scale is not None:
        peaks = peaks / trace.current_scale
    return peaks


def readout_decision(trace: ForwardTrace) -> int:
    """Class with the highest peak readout current; ties go to the lowest index."""
    if trace.readout_currents.size == 0:
        raise ValueError("empty trace")
    return int(np.argmax(readout_peaks(trace)))


# ---------------------------------------------------------------------------
# Serialization


def network_to_dict(network: Network) -> dict:
    return {
        "format": "wavesense-network",
        "version": FORMAT_VERSION,
        "seed": network.seed,
        "n_input": network.n_input,
        "dt": network.dt,
        "encoder_step": None if network.encoder_step is None else [float(s) for s in network.encoder_step],
        "config": None if network.config is None else asdict(network.config),
        "meta": network.meta,
        "populations": [
            {**asdict(p), "tau_syn": list(p.tau_syn), "threshold": _enc_float(p.threshold)}
            for p in network.populations
        ],
        "projections": [
            {
                "name": p.name,
                "sources": list(p.sources),
                "target": p.target,
                "synapse": p.synapse,
                "shape": list(p.weight.shape),
                "weights": p.weight.ravel().tolist(),
            }
            for p in network.projections
        ],
    }


def _enc_float(x: float):
    return "inf" if math.isinf(x) else x


def network_from_dict(doc: dict) -> Network:
    if doc.get("format") != "wavesense-network":
        raise ValueError("not a network document")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported network document version {doc.get('version')}")
    pops = [
        Population(**{**p, "tau_syn": tuple(p["tau_syn"]), "threshold": float(p["threshold"]),
                      "bias": tuple(p["bias"]) if isinstance(p["bias"], list) else p["bias"]})
        for p in doc["populations"]
    ]
    projs = [
        Projection(p["name"], tuple(p["sources"]), p["target"], p["synapse"],
                   np.array(p["weights"], dtype=np.float64).reshape(p["shape"]))
        for p in doc["projections"]
    ]
    config = WaveSenseConfig(**doc["config"]) if doc.get("config") else None
    return Network(
        doc["n_input"], doc["dt"], pops, projs, seed=doc.get("seed"),
        encoder_step=doc.get("encoder_step"), config=config, meta=doc.get("meta", {}),
    )


def save_network(network: Network, path) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_dict(network), fh, indent=1)


def load_network(path) -> Network:
    with open(path) as fh:
        return network_from_dict(json.load(fh))
