"""Surrogate-gradient BPTT, the activity-regularized loss, Adam, and metrics."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .encoding import SpikeRaster
from .errors import NonFiniteLoss
from .lif import MAX_SPIKES
from .network import INPUT, READOUT, READOUT_BIAS, FloatEngine, Network, forward_batch

log = logging.getLogger(__name__)

SURROGATE_WINDOW = 2  # thresholds either side of v summed during training


@dataclass
class TrainConfig:
    epochs: int = 150
    learning_rate: float = 0.0005
    train_fraction: float = 0.8  # 4:1 split
    batch_size: int = 16
    seed: int = 0
    reg_threshold_l: float = 1.0
    surrogate_slope: float = 10.0
    max_imbalance: float = 3.0

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.reg_threshold_l < 0:
            raise ValueError("reg_threshold_l must be non-negative")
        if self.batch_size <= 0 or self.surrogate_slope <= 0:
            raise ValueError("batch_size and surrogate_slope must be positive")


def surrogate_spike_grad(v_mem, threshold, slope):
    """Fast-sigmoid surrogate for d(spike)/d(v)."""
    return slope / (1 + slope * np.abs(v_mem - threshold)) ** 2


def multi_spike_grad(v_mem, threshold, slope, cap: int = MAX_SPIKES, window: int | None = None):
    """Surrogate for d(count)/d(v) when up to ``cap`` spikes fire per step.

    floor(v / threshold) clipped to ``cap`` equals the sum of ``cap`` steps at
    k x threshold; the derivative sums one surrogate per step.  With
    ``window`` only the steps within that many thresholds of ``v`` are summed
    (the rest contribute little and cost a lot); ``None`` sums all of them.
    """
    v_mem = np.asarray(v_mem, dtype=np.float64)
    if window is None:
        out = np.zeros_like(v_mem)
        for k in range(1, cap + 1):
            out += surrogate_spike_grad(v_mem, k * threshold, slope)
        return out
    nearest = np.clip(np.round(v_mem / threshold), 1, cap)
    out = np.zeros_like(v_mem)
    for offset in range(-window, window + 1):
        k = nearest + offset
        valid = (k >= 1) & (k <= cap)
        out += np.where(valid, surrogate_spike_grad(v_mem, k * threshold, slope), 0.0)
    return out


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(peaks, label) -> float:
    z = np.asarray(peaks, dtype=np.float64)
    m = z.max()
    return float(m + math.log(np.exp(z - m).sum()) - z[label])


def activity_penalty(spike_counts, T: int, n_neurons: int, l: float) -> float:
    """Sum over neurons and bins of (N * H(N - l) / (T * n_neurons))**2 with H(0) = 0."""
    n = np.asarray(spike_counts, dtype=np.float64)
    excess = np.where(n > l, n, 0.0)
    return float(np.sum((excess / (T * n_neurons)) ** 2))


def loss_total(readout_peaks, label, spike_counts, T, n_neurons, l) -> float:
    if T <= 0 or n_neurons <= 0:
        raise ValueError("T and n_neurons must be positive")
    return cross_entropy(readout_peaks, label) + activity_penalty(spike_counts, T, n_neurons, l)


# ---------------------------------------------------------------------------
# BPTT


def loss_and_grad(network: Network, counts: np.ndarray, labels: np.ndarray, l: float = 1.0,
                  slope: float = 10.0, soft: bool = False, regularize: bool = True,
                  detach_reset: bool | None = None):
    """Batch-mean loss and its gradient w.r.t. every weight and the readout bias.

    ``counts`` is (batch, channels, T).  With ``soft=True`` the forward pass uses
    the smooth spike function whose derivative is the surrogate, which makes
    the returned gradient exact (used for finite-difference checking).

    ``detach_reset`` drops the reset term ``-threshold * spikes`` from the
    backward pass.  It defaults to on for hard spikes: with slope 10 and
    threshold 0.6 the attached reset multiplies the gradient by about -5 per
    step and BPTT diverges.  The soft (checking) mode keeps it attached.
    """
    if detach_reset is None:
        detach_reset = not soft
    counts = np.asarray(counts, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    B, _, T = counts.shape
    engine = FloatEngine(network, soft_slope=slope if soft else None)
    pops = network.populations
    spiking = [p for p in pops if p.spiking]
    n_neurons = sum(p.size for p in spiking)

    state = engine.init_state(B)
    v_pre = {p.name: np.empty((T, B, p.size)) for p in spiking}
    spk = {p.name: np.empty((T, B, p.size)) for p in spiking}
    currents = np.empty((T, B, network.n_classes))
    for t in range(T):
        s, vp, cur = engine.step(state, counts[:, :, t])
        for p in spiking:
            v_pre[p.name][t] = vp[p.name]
            spk[p.name][t] = s[p.name]
        currents[t] = cur

    peak_t = currents.argmax(axis=0)  # (B, K)
    peaks = np.take_along_axis(currents, peak_t[None], axis=0)[0]
    prob = _softmax(peaks)
    ce = -np.log(np.maximum(prob[np.arange(B), labels], 1e-300))
    loss = ce.mean()
    reg_grad = {}
    if regularize:
        norm = (T * n_neurons) ** 2
        for p in spiking:
            excess = np.where(spk[p.name] > l, spk[p.name], 0.0)
            loss += np.sum(excess**2) / norm / B
            reg_grad[p.name] = 2 * excess / norm / B

    g_peak = prob.copy()
    g_peak[np.arange(B), labels] -= 1
    g_peak /= B
    g_current = np.zeros_like(currents)
    np.put_along_axis(g_current, peak_t[None], g_peak[None], axis=0)

    window = None if soft else SURROGATE_WINDOW
    surrogate = {p.name: multi_spike_grad(v_pre[p.name], p.threshold, slope, window=window) for p in spiking}
    del v_pre

    # gradient w.r.t. each projection's input current, collected over time
    g_input = {(p.name, k): np.empty((T, B, p.size)) for p in pops for k in range(p.n_syn)}
    gv = {p.name: np.zeros((B, p.size)) for p in pops}
    gi = {p.name: np.zeros((B, p.n_syn, p.size)) for p in pops}
    alpha = engine.alpha
    beta = engine.beta
    incoming = engine.incoming
    for t in range(T - 1, -1, -1):
        g_spk = {p.name: (reg_grad[p.name][t].copy() if regularize else np.zeros((B, p.size))) for p in spiking}
        for pop in reversed(pops):
            name = pop.name
            if pop.spiking:
                g_vpost = beta[name] * gv[name]
                g_s = g_spk[name] if detach_reset else g_spk[name] - (pop.threshold - pop.v_reset) * g_vpost
                g_vpre = g_vpost + g_s * surrogate[name][t]
                gv[name] = g_vpre
                gi[name] = alpha[name] * gi[name] + g_vpre[:, None, :]
            else:
                gi[name] = alpha[name] * gi[name]
                gi[name][:, 0, :] += g_current[t]
            for k in range(pop.n_syn):
                g_input[(name, k)][t] = gi[name][:, k]
            for proj in incoming[name]:
                ga = gi[name][:, proj.synapse]
                back = ga * proj.weight if proj.diagonal else ga @ proj.weight.T
                for src in proj.sources:
                    if src != INPUT:
                        g_spk[src] += back

    grads = {}
    for proj in network.projections:
        src = counts.transpose(2, 0, 1) if proj.sources[0] == INPUT else spk[proj.sources[0]]
        for name in proj.sources[1:]:
            src = src + spk[name]
        ga = g_input[(proj.target, proj.synapse)]
        if proj.diagonal:
            grads[proj.name] = np.einsum("tbi,tbi->i", src, ga)
        else:
            grads[proj.name] = np.einsum("tbi,tbj->ij", src, ga)
    grads[READOUT_BIAS] = g_input[(READOUT, 0)].sum(axis=(0, 1))
    spike_totals = {p.name: spk[p.name].sum() for p in spiking}
    return float(loss), grads, {"peaks": peaks, "spikes": spike_totals, "ce": float(ce.mean())}


class Adam:
    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        b1, b2 = self.betas
        out = {}
        for k in sorted(params):
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            m_hat = self.m[k] / (1 - b1**self.t)
            v_hat = self.v[k] / (1 - b2**self.t)
            out[k] = params[k] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @staticmethod
    def _ratio(num, den):
        return num / den if den else None

    @property
    def accuracy(self):
        return self._ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn)

    @property
    def sensitivity(self):
        return self._ratio(self.tp, self.tp + self.fn)

    @property
    def specificity(self):
        return self._ratio(self.tn, self.tn + self.fp)

    @property
    def f1(self):
        return self._ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn)

    @classmethod
    def from_predictions(cls, predicted, actual, positive: int = 1) -> "Metrics":
        p = np.asarray(predicted) == positive
        a = np.asarray(actual) == positive
        return cls(int(np.sum(p & a)), int(np.sum(p & ~a)), int(np.sum(~p & ~a)), int(np.sum(~p & a)))

    def as_dict(self) -> dict:
        return {**asdict(self), "accuracy": self.accuracy, "sensitivity": self.sensitivity,
                "specificity": self.specificity, "f1": self.f1}


def _stack(trials):
    counts = np.stack([r.counts for r, _ in trials])
    labels = np.array([int(y) for _, y in trials])
    return counts, labels


def predict(model, rasters, batch_size: int = 64) -> np.ndarray:
    """Class decisions for a list of rasters, float Network or QuantizedConfig."""
    from .hwmap import QuantizedConfig, run_quantized_batch

    out = []
    for lo in range(0, len(rasters), batch_size):
        counts = np.stack([r.counts for r in rasters[lo:lo + batch_size]])
        if isinstance(model, QuantizedConfig):
            currents, _, _ = run_quantized_batch(model, counts)
            peaks = currents.max(axis=2) / model.output_scale
        else:
            currents, _ = forward_batch(model, counts, record_spikes=False)
            peaks = currents.max(axis=2)
        out.append(np.argmax(peaks, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def evaluate(model, trials) -> Metrics:
    if not trials:
        raise ValueError("no trials to evaluate")
    rasters = [r for r, _ in trials]
    labels = [int(y) for _, y in trials]
    return Metrics.from_predictions(predict(model, rasters), labels)


# ---------------------------------------------------------------------------
# Training loop


def rebalance(trials, max_ratio: float, rng) -> list:
    """Subsample the majority class down to ``max_ratio`` x the minority class."""
    by_class = {}
    for k, (_, y) in enumerate(trials):
        by_class.setdefault(int(y), []).append(k)
    smallest = min(len(v) for v in by_class.values())
    keep = []
    for y in sorted(by_class):
        idx = by_class[y]
        limit = int(math.floor(max_ratio * smallest))
        if len(idx) > limit:
            idx = sorted(rng.choice(idx, size=limit, replace=False).tolist())
        keep += idx
    return [trials[k] for k in sorted(keep)]


def train(network: Network, trials, config: TrainConfig, test_trials=None, history_path=None):
    """Train all projection weights; returns ``(network, history)``.

    ``trials`` is a list of ``(SpikeRaster, label)``.  History rows hold the
    epoch-mean training loss and metrics on ``test_trials`` (or on the
    training set when no test split is given).
    """
    labels = {int(y) for _, y in trials}
    if not {0, 1} <= labels:
        raise ValueError("need at least one trial of each class")
    rng = np.random.default_rng(config.seed)
    trials = rebalance(trials, config.max_imbalance, rng)
    params = {k: v.copy() for k, v in network.params().items()}
    opt = Adam(params, config.learning_rate)
    history = []
    sink = open(history_path, "w") if history_path else None
    try:
        for epoch in range(config.epochs):
            order = rng.permutation(len(trials))
            losses = []
            for b, lo in enumerate(range(0, len(order), config.batch_size)):
                batch = [trials[k] for k in order[lo:lo + config.batch_size]]
                counts, y = _stack(batch)
                loss, grads, _ = loss_and_grad(
                    network, counts, y, config.reg_threshold_l, config.surrogate_slope
                )
                if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                    raise NonFiniteLoss(epoch, b)
                params = opt.step(params, grads)
                network = network.with_weights(params)
                losses.append(loss * len(batch))
            metrics = evaluate(network, test_trials or trials)
            row = {"epoch": epoch, "loss": sum(losses) / len(trials), **{
                k: metrics.as_dict()[k] for k in ("accuracy", "sensitivity", "specificity", "f1")
            }}
            history.append(row)
            log.info("epoch %d loss %.4f acc %s", epoch, row["loss"], row["accuracy"])
            if sink:
                sink.write(json.dumps(row) + "\n")
                sink.flush()
    finally:
        if sink:
            sink.close()
    return network, history


# ---------------------------------------------------------------------------
# Finite-difference gradient check


def subthreshold(network: Network, counts: np.ndarray, margin: float = 2.0) -> Network:
    """Raise every spiking threshold above the largest membrane excursion."""
    silent = network.with_populations(threshold=np.finfo(np.float64).max)
    engine = FloatEngine(silent)
    state = engine.init_state(counts.shape[0])
    peak = 0.0
    for t in range(counts.shape[2]):
        _, vp, _ = engine.step(state, counts[:, :, t])
        peak = max(peak, max(float(np.abs(v).max()) for name, v in vp.items()))
    return network.with_populations(threshold=margin * peak + 1.0)


def grad_check(network: Network, raster: SpikeRaster, label: int = 1, epsilon: float = 1e-5,
               names=None, slope: float = 10.0, return_details: bool = False, raise_thresholds: bool = True):
    """Max relative error between BPTT and fourth-order central differences of the CE loss.

    Thresholds are raised so no spike fires; the forward pass uses the smooth
    spike function, so both routes differentiate the same function.  By
    default the readout and skip weights are checked.  ``raise_thresholds=False``
    keeps the soft spikes active, so gradients through the hidden layers are
    large enough to check against finite differences.
    """
    counts = raster.counts[None].astype(np.float64)
    y = np.array([label])
    net = subthreshold(network, counts) if raise_thresholds else network
    if names is None:
        names = [p.name for p in net.projections if p.target in (READOUT, "ro.hidden")]
    _, grads, _ = loss_and_grad(net, counts, y, slope=slope, soft=True, regularize=False)
    weights = net.params()

    def ce(w):
        engine = FloatEngine(net.with_weights(w), soft_slope=slope)
        state = engine.init_state(1)
        peak = np.full(net.n_classes, -np.inf)
        for t in range(counts.shape[2]):
            peak = np.maximum(peak, engine.step(state, counts[:, :, t])[2][0])
        return cross_entropy(peak, label)

    analytic, numeric = [], []
    for name in names:
        base = weights[name]
        for idx in np.ndindex(base.shape):
            def at(k):
                w = {**weights, name: base.copy()}
                w[name][idx] += k * epsilon
                return ce(w)
            # fourth-order central stencil; the live soft network curves on a
            # scale of ~1e-5 in weight space, too tight for the two-point rule
            numeric.append((at(-2) - 8 * at(-1) + 8 * at(1) - at(2)) / (12 * epsilon))
            analytic.append(grads[name][idx])
    analytic, numeric = np.array(analytic), np.array(numeric)
    # the loss carries a few ulps of accumulated rounding and the stencil
    # weights sum to 18/12, so slopes closer than ~16 ulps / epsilon cannot be
    # told apart; that much disagreement is rounding noise, not gradient error
    resolution = 16 * np.finfo(np.float64).eps * max(1.0, abs(ce(weights))) / epsilon
    floor = max(1e-6 * max(np.abs(analytic).max(), np.abs(numeric).max()), 1e-300)
    excess = np.maximum(np.abs(analytic - numeric) - resolution, 0.0)
    rel = excess / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    if return_details:
        return float(rel.max()), analytic, numeric
    return float(rel.max())
