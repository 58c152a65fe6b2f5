import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seizure_snn.encoding import SpikeRaster
from seizure_snn.errors import ConfigViolation, ShapeMismatch
from seizure_snn.lif import dash_from_tau, shift_decay
from seizure_snn.network import (
    INPUT,
    READOUT,
    ForwardTrace,
    Network,
    Population,
    Projection,
    WaveSenseConfig,
    build_network,
    forward,
    forward_batch,
    network_from_dict,
    network_to_dict,
    readout_decision,
    readout_peaks,
)

DT = 1 / 256


def random_raster(seed, n_input=4, T=256, rate=0.3):
    rng = np.random.default_rng(seed)
    return SpikeRaster(rng.poisson(rate, (n_input, T)), DT)


def small_config(**kw):
    base = dict(n_blocks=2, neurons_per_block=6, readout_hidden=5)
    base.update(kw)
    return WaveSenseConfig(**base)


def excitable(net, gain=3.0):
    """Scale weights so the small random nets actually spike."""
    return net.with_weights({k: gain * w for k, w in net.weights().items()})


def test_default_weight_count_near_table():
    net = build_network(WaveSenseConfig(), seed=0)
    assert abs(net.weight_count - 2400) <= 0.25 * 2400
    assert net.n_hidden == 160


def test_same_seed_same_weights():
    a, b = build_network(WaveSenseConfig(), 3), build_network(WaveSenseConfig(), 3)
    for k in a.weights():
        np.testing.assert_array_equal(a.weights()[k], b.weights()[k])
    c = build_network(WaveSenseConfig(), 4)
    assert any(not np.array_equal(a.weights()[k], c.weights()[k]) for k in a.weights())


def test_hidden_limit():
    # 16 * (1 + 2 * 31) + 9 = 1017; pick sizes that land on exactly 1001
    cfg = WaveSenseConfig(n_blocks=2, neurons_per_block=100, readout_hidden=501)
    assert cfg.n_hidden == 1001
    with pytest.raises(ConfigViolation):
        build_network(cfg)
    build_network(WaveSenseConfig(n_blocks=2, neurons_per_block=100, readout_hidden=500))


@pytest.mark.parametrize("kw", [dict(n_input_channels=17), dict(n_classes=9), dict(n_classes=1),
                                dict(dilation_taus=[DT, 2 * DT])])
def test_config_violations(kw):
    with pytest.raises(ConfigViolation):
        build_network(WaveSenseConfig(**kw))


def test_tau_below_dt_rejected():
    with pytest.raises(ValueError):
        build_network(WaveSenseConfig(tau_mem=0.002))


def test_dilation_schedule_doubles():
    # one extra bit of shift per step halves the leak, i.e. roughly doubles tau
    cfg = WaveSenseConfig()
    dashes = [dash_from_tau(t, DT) for t in cfg.taus()]
    assert dashes == [1, 2, 2, 3, 3, 4, 4, 5]
    for t, d in zip(cfg.taus(), dashes):
        assert math.exp(-DT / t) == pytest.approx(shift_decay(d), abs=1e-12)


def test_default_taus_are_exact_shift_decays():
    cfg = WaveSenseConfig()
    for tau in (cfg.tau_mem, cfg.tau_syn, cfg.tau_out):
        d = dash_from_tau(tau, DT)
        assert math.exp(-DT / tau) == pytest.approx(shift_decay(d), abs=1e-12)


def test_zero_raster_zero_currents():
    net = build_network(WaveSenseConfig(), 0)
    trace = forward(net, SpikeRaster(np.zeros((4, 1280), dtype=int), DT))
    assert trace.readout_currents.shape == (2, 1280)
    assert not trace.readout_currents.any()


def test_single_weight_kernel():
    tau, w = 5 * DT, 0.37
    net = Network(
        1, DT,
        [Population(READOUT, 1, DT, (tau,), math.inf, spiking=False)],
        [Projection("w", (INPUT,), READOUT, 0, np.array([[w]]))],
    )
    counts = np.zeros((1, 40), dtype=int)
    counts[0, 7] = 1
    cur = forward(net, SpikeRaster(counts, DT)).readout_currents[0]
    t = np.arange(40)
    kernel = np.where(t >= 7, w * np.exp(-(t - 7) * DT / tau), 0.0)
    np.testing.assert_allclose(cur, kernel, rtol=1e-12, atol=0)


def test_shape_contract_and_mismatch():
    net = build_network(WaveSenseConfig(), 0)
    trace = forward(net, random_raster(0, T=1280))
    assert trace.readout_currents.shape == (2, 1280)
    assert trace.spikes["b0.dil"].shape == (16, 1280)
    with pytest.raises(ShapeMismatch):
        forward(net, random_raster(0, n_input=6))


@pytest.mark.parametrize("currents,cls", [
    ([[0, 1, 0], [0, 0, 0.5]], 0),
    ([[0, 0, 0], [0, 0, 0]], 0),
    ([[0, 2, 0], [3, 0, 0]], 1),
])
def test_readout_decision(currents, cls):
    assert readout_decision(ForwardTrace({}, np.array(currents, float))) == cls


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=6, max_size=6), st.floats(1e-3, 1e3))
def test_decision_scale_invariant(vals, a):
    cur = np.array(vals).reshape(2, 3)
    assert readout_decision(ForwardTrace({}, cur)) == readout_decision(ForwardTrace({}, a * cur))


def test_forward_deterministic():
    net = excitable(build_network(small_config(), 1))
    r = random_raster(5)
    a, b = forward(net, r), forward(net, r)
    np.testing.assert_array_equal(a.readout_currents, b.readout_currents)
    assert a.spike_totals == b.spike_totals


def test_batch_matches_single():
    net = excitable(build_network(small_config(), 1))
    rasters = [random_raster(s) for s in range(3)]
    batch, _ = forward_batch(net, np.stack([r.counts for r in rasters]))
    for k, r in enumerate(rasters):
        # BLAS may sum in a different order for different batch sizes
        np.testing.assert_allclose(batch[k], forward(net, r).readout_currents, rtol=1e-12, atol=1e-12)


def test_network_actually_spikes():
    net = excitable(build_network(small_config(), 1))
    totals = forward(net, random_raster(2)).spike_totals
    assert totals["in"] > 0 and totals["ro.hidden"] > 0


def _permute(net, perm_channel, perm_hidden):
    w = {}
    for p in net.projections:
        m = p.weight
        if p.diagonal:
            m = m[perm_channel]
        else:
            if p.target != "ro.hidden" and p.target != READOUT:
                m = m[:, perm_channel]
            if p.target == "ro.hidden":
                m = m[:, perm_hidden]
            if p.sources[0] not in (INPUT, "ro.hidden"):
                m = m[perm_channel]
            if p.sources[0] == "ro.hidden":
                m = m[perm_hidden]
        w[p.name] = m
    return net.with_weights(w)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    cfg = small_config()
    net = excitable(build_network(cfg, seed))
    perm_c = rng.permutation(cfg.neurons_per_block)
    perm_h = rng.permutation(cfg.readout_hidden)
    r = random_raster(seed)
    a = forward(net, r)
    b = forward(_permute(net, perm_c, perm_h), r)
    np.testing.assert_allclose(b.readout_currents, a.readout_currents, rtol=1e-9, atol=1e-12)
    np.testing.assert_array_equal(b.spikes["b1.dil"], a.spikes["b1.dil"][perm_c])


def test_residual_identity_matches_fewer_blocks():
    """Silencing block 1 leaves the output of block 0 exactly as a 1-block network."""
    two = excitable(build_network(small_config(n_blocks=2), 0))
    w = dict(two.weights())
    for name in ("b1.w_dil0", "b1.w_dil1", "b1.w_res", "b1.w_skip"):
        w[name] = np.zeros_like(w[name])
    two = two.with_weights(w)
    one = build_network(small_config(n_blocks=1), 0)
    one = one.with_weights({k: w[k] for k in one.weights()})
    r = random_raster(3)
    np.testing.assert_array_equal(forward(two, r).readout_currents, forward(one, r).readout_currents)


def test_zero_blocks_skip_only():
    net = build_network(small_config(n_blocks=2), 0)
    silent = net.with_weights({k: np.zeros_like(v) if k.startswith("b") else v for k, v in net.weights().items()})
    empty = build_network(small_config(n_blocks=0), 0)
    r = random_raster(1)
    np.testing.assert_array_equal(forward(silent, r).readout_currents, forward(empty, r).readout_currents)


def test_serialization_round_trip():
    net = build_network(WaveSenseConfig(), 2)
    net.encoder_step = [1.5, 2.5]
    back = network_from_dict(network_to_dict(net))
    assert back.readout.threshold == math.inf
    assert back.encoder_step == [1.5, 2.5] and back.config == net.config
    for k, v in net.weights().items():
        np.testing.assert_array_equal(back.weights()[k], v)


def test_topology_checks():
    pops = [Population("a", 2, DT, (DT,), 1.0), Population(READOUT, 2, DT, (DT,), math.inf, spiking=False)]
    with pytest.raises(ConfigViolation):
        Network(2, DT, pops, [Projection("x", (INPUT,), "a", 0, np.zeros((3, 2)))])
    with pytest.raises(ConfigViolation):
        Network(2, DT, pops, [Projection("x", (READOUT,), "a", 0, np.zeros((2, 2)))])
    with pytest.raises(ConfigViolation):
        Network(2, DT, pops, [Projection("x", (INPUT,), "a", 1, np.zeros((2, 2)))])
    with pytest.raises(ConfigViolation):
        Network(2, DT, pops, [Projection("x", (INPUT,), "a", 0, np.full((2, 2), np.nan))])


def test_readout_peaks_scaled():
    trace = ForwardTrace({}, np.array([[0, 254.0], [127.0, 0]]), current_scale=np.array([254.0, 127.0]))
    np.testing.assert_array_equal(readout_peaks(trace), [1.0, 1.0])
