"""End-to-end acceptance checks, one test per criterion, plus the streaming
single-seizure example on the trained models.

Each test prints a single ``CRITERION n PASS|FAIL: ...`` line (shown even
without ``-s``).  The module fixture runs the default CLI pipeline once on
the synthetic corpus; that takes several minutes on one core.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seizure_snn import cli, corpus
from seizure_snn.encoding import SpikeRaster, decode, encode
from seizure_snn.hwmap import extract_graph, load_quantized, quantize, simulate_quantized, validate
from seizure_snn.lif import dash_from_tau, shift_decay
from seizure_snn.network import INPUT, Projection, WaveSenseConfig, build_network, load_network
from seizure_snn.recording import Recording
from seizure_snn.stream import StreamEngine, batch_decisions, replay
from seizure_snn.synth import SynthParams, synth_eeg
from seizure_snn.training import grad_check
from test_hwmap import qconfig
from test_stream import reference_fsm, run_fsm

DT = 1 / 256
STAGES = ("synth", "preprocess", "encode", "train", "quantize", "eval")


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return report


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    base = ["--out", str(out)]
    start = time.perf_counter()
    for command in STAGES:
        assert cli.main([command, *base]) == 0, command
    elapsed = time.perf_counter() - start
    for command in ("eval", "latency"):
        assert cli.main([command, "--quantized", *base]) == 0, command
    assert cli.main(["latency", *base]) == 0
    (run,) = out.iterdir()
    return run, elapsed


def _json(run, name):
    return json.loads((run / name).read_text())


def _predictions(run, name):
    return np.loadtxt(run / name, skiprows=1, dtype=int, ndmin=2)


def test_criterion_1_classification(pipeline, verdict):
    run, elapsed = pipeline
    m = _json(run, "metrics.json")
    with np.load(run / "trials.npz") as z:
        labels, split = z["labels"], z["split"]
    n, ictal, test_share = len(labels), labels.mean(), (split == 1).mean()
    ok = (n >= 400 and 0.4 <= ictal <= 0.6 and abs(test_share - 0.2) < 0.02 and m["accuracy"] >= 0.85
          and m["sensitivity"] >= 0.80 and m["specificity"] >= 0.80 and elapsed < 15 * 60)
    verdict(1, ok, f"trials={n} ictal={ictal:.2f} test_share={test_share:.2f} accuracy={m['accuracy']:.3f} "
                   f"sensitivity={m['sensitivity']:.3f} specificity={m['specificity']:.3f} minutes={elapsed / 60:.1f}")


def test_criterion_2_quantization_fidelity(pipeline, verdict):
    run, _ = pipeline
    a, b = _predictions(run, "predictions.tsv"), _predictions(run, "predictions_quantized.tsv")
    agreement = float(np.mean(a[:, 2] == b[:, 2]))
    drop = _json(run, "metrics.json")["accuracy"] - _json(run, "metrics_quantized.json")["accuracy"]
    verdict(2, agreement >= 0.90 and drop <= 0.05, f"agreement={agreement:.3f} accuracy_drop={drop:+.3f}")


def test_criterion_3_latency(pipeline, verdict):
    run, _ = pipeline
    parts = []
    ok = True
    for tag in ("", "_quantized"):
        stat = _json(run, f"latency{tag}.json")
        rows = [r.split("\t") for r in (run / f"latency{tag}.tsv").read_text().splitlines()[1:]]
        values = [float(v) for _, y, v in rows if y == "1" and v]
        on_grid = all(math.isclose(v / 0.5, round(v / 0.5)) for v in values)
        ok &= stat["median_s"] is not None and stat["median_s"] <= 1.0 and on_grid
        parts.append(f"{tag or '_float'}: median={stat['median_s']} detection_rate={stat['detection_rate']:.3f} "
                     f"on_grid={on_grid}")
    verdict(3, ok, "; ".join(p.lstrip("_") for p in parts))


def test_criterion_4_gradient(verdict):
    worst = []

    @settings(max_examples=6, deadline=None, database=None)
    @given(st.integers(0, 10_000), st.integers(0, 1))
    def check(seed, label):
        net = build_network(WaveSenseConfig(n_blocks=2, neurons_per_block=4, readout_hidden=4), seed)
        raster = SpikeRaster(np.random.default_rng(seed).poisson(0.4, (4, 24)), DT)
        err = grad_check(net, raster, label=label)
        worst.append(err)
        assert err < 1e-4

    try:
        check()
        ok = True
    except AssertionError:
        ok = False
    verdict(4, ok, f"max relative error={max(worst):.2e} over {len(worst)} cases")


def test_criterion_5_decay_equivalence(verdict):
    ratios = [2 ** k for k in range(1, 8)]
    gaps = {r: abs(shift_decay(dash_from_tau(r * DT, DT)) - math.exp(-1 / r)) for r in ratios}
    q = quantize(extract_graph(build_network(WaveSenseConfig(), 0)))
    raster = SpikeRaster(np.random.default_rng(5).poisson(0.5, (4, 512)), DT)
    a, b = simulate_quantized(q, raster), simulate_quantized(q, raster)
    identical = np.array_equal(a.readout_currents, b.readout_currents) and all(
        np.array_equal(a.spikes[k], b.spikes[k]) for k in a.spikes)
    failing = {r: round(g, 4) for r, g in gaps.items() if g >= 0.05}
    verdict(5, not failing and identical,
            f"max gap={max(gaps.values()):.4f} failing ratios={failing} bit_identical={identical}")


def test_criterion_6_encoder_bound(verdict):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 300))
        step = float(rng.uniform(0.05, 5))
        sig = np.cumsum(rng.normal(0, rng.uniform(0.1, 10), (1, n)), axis=1)
        err = np.max(np.abs(decode(encode(sig, step, max_per_step=None), step, sig[:, 0]) - sig)) / step
        worst = max(worst, err)
    single = 0
    for _ in range(200):
        sig = np.cumsum(rng.uniform(0, 3, (1, 200)), axis=1) * rng.choice([-1, 1])
        c = encode(sig, float(rng.uniform(0.1, 2)), max_per_step=None).counts
        single += not (c[0].any() and c[1].any())
    verdict(6, worst < 1 and single == 200, f"max error/step={worst:.6f} single-polarity monotone={single}/200")


def test_criterion_7_alarm_fsm(verdict):
    mismatches = sum(run_fsm(bits) != reference_fsm(bits) for bits in itertools.product([0, 1], repeat=10))
    verdict(7, mismatches == 0, f"mismatches={mismatches}/1024")


def test_criterion_8_resource_validation(verdict):
    def named(q, bound):
        return bound in [v.bound for v in validate(q)]

    capped = qconfig()
    capped.spike_cap = 32
    wide = qconfig()
    wide.projections[0] = Projection("w_h", (INPUT,), "h", 0, np.full((2, 4), 128, dtype=np.int64))
    cases = {
        "input > 16": named(qconfig(n_input=17), "input > 16"),
        "output > 8": named(qconfig(n_out=9), "output > 8"),
        "hidden > 1000": named(qconfig(hidden=(("h", 1001),)), "hidden > 1000"),
        "fanout > 32": named(qconfig(hidden=(("a", 1), ("b", 33))), "fanout > 32"),
        "weight": named(wide, "weight outside [-128, 127]"),
        "spike cap": named(capped, "spike cap > 31"),
    }
    net = build_network(WaveSenseConfig(), 0)
    default_ok = validate(quantize(extract_graph(net))) == []
    within = abs(net.weight_count - 2400) <= 0.25 * 2400
    verdict(8, all(cases.values()) and default_ok and within,
            f"bounds named={sum(cases.values())}/{len(cases)} default_valid={default_ok} weights={net.weight_count}")


def test_criterion_9_synops(pipeline, verdict):
    run, _ = pipeline
    q = load_quantized(run / "quantized.json")
    n_in = q.n_input
    rng = np.random.default_rng(9)
    zero = simulate_quantized(q, SpikeRaster(np.zeros((n_in, 512), dtype=int), DT)).energy.total_synops
    monotone = deterministic = True
    for _ in range(10):
        counts = rng.poisson(0.2, (n_in, 512))
        base = simulate_quantized(q, SpikeRaster(counts, DT)).energy
        deterministic &= base == simulate_quantized(q, SpikeRaster(counts, DT)).energy
        more = simulate_quantized(q, SpikeRaster(2 * counts, DT)).energy
        monotone &= more.total_synops >= base.total_synops
    verdict(9, zero == 0 and monotone and deterministic,
            f"zero_input={zero} monotone={monotone} deterministic={deterministic}")


def test_criterion_10_stream_batch(pipeline, verdict):
    run, _ = pipeline
    net = load_network(run / "network.json")
    q = load_quantized(run / "quantized.json")
    with np.load(run / "rasters.npz") as z:
        step = z["step"]
    rng = np.random.default_rng(10)
    n_ch = net.n_input // 2
    mismatched = {"float": 0, "fixed": 0}
    positives = 0
    for _ in range(50):
        n = int(rng.integers(1, 7) * 128 + rng.integers(0, 128))
        data = np.cumsum(rng.normal(0, 1, (n_ch, n)), axis=1) * rng.uniform(0.5, 3) * step[:, None]
        rec = Recording([f"c{k}" for k in range(n_ch)], 256, data)
        counts = encode(data, step).counts
        for tag, model in (("float", net), ("fixed", q)):
            streamed = [d for _, d, _ in replay(rec, StreamEngine(model, step)).entries]
            batched = batch_decisions(model, counts, 128).tolist()
            mismatched[tag] += streamed != batched
            positives += sum(batched)
    verdict(10, not any(mismatched.values()),
            f"mismatched recordings={mismatched} of 50 (positive decisions seen={positives})")


def test_stream_single_seizure_example(pipeline):
    # one fresh recording with a 30 s seizure, streamed through the trained models
    run, _ = pipeline
    cfg = cli.load_config(run / "config.json")
    rec = synth_eeg(SynthParams(duration_s=60.0, seizures=[(20.0, 50.0)]), 0)
    rec = corpus.preprocess(rec, cfg.filter, cfg.preprocess.channels, cfg.preprocess.target_hz)
    with np.load(run / "rasters.npz") as z:
        step = z["step"]
    for model in (load_network(run / "network.json"), load_quantized(run / "quantized.json")):
        intervals = replay(rec, StreamEngine(model, step)).alarm_intervals()
        assert len(intervals) == 1, intervals
        start, end = intervals[0]
        assert min(end, 50.0) - max(start, 20.0) >= 0.8 * 30.0
