"""Command-line pipeline: synth -> preprocess -> encode -> train -> quantize -> eval/stream/report.

Every stage reads and writes plain files inside a run directory
``<out>/run-<hash>`` where the hash covers the materialized config (the
streaming section excluded, so the decision period can be varied over one
trained model).  Failures print a single ``error: {json}`` line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import corpus, hwmap
from .edf import parse_edf, write_edf
from .encoding import DEFAULT_MAX_PER_STEP, SpikeRaster, encode
from .errors import ArtifactMissing, ConfigError, SeizureSNNError, ValidationFailed
from .filters import FilterSpec
from .network import WaveSenseConfig, build_network, load_network, save_network
from .recording import DEFAULT_CHANNELS, Label, Recording, format_annotations, parse_annotations
from .stream import StreamEngine, measure_latency, replay
from .training import Metrics, TrainConfig, predict, train

log = logging.getLogger("seizure_snn")

CONFIG_VERSION = 1
COMMANDS = ("synth", "preprocess", "encode", "train", "quantize", "validate", "eval", "stream", "latency", "report")


# ---------------------------------------------------------------------------
# Config


@dataclasses.dataclass
class DataSection:
    source: str = "synth"  # "synth" or "edf"
    synth: dict = dataclasses.field(default_factory=lambda: dataclasses.asdict(corpus.SynthCorpusSpec()))
    recordings: list = dataclasses.field(default_factory=list)  # [{"edf": path, "annotations": path}]


@dataclasses.dataclass
class PreprocessSection:
    channels: list = dataclasses.field(default_factory=lambda: list(DEFAULT_CHANNELS))
    target_hz: float = 256.0
    rereference: bool = False
    window_s: float = 5.0
    overlap_threshold: float = 0.5


@dataclasses.dataclass
class EncoderSection:
    policy: str = "iqr"  # "iqr": fraction x training IQR per channel; "fixed": use ``step``
    fraction: float = 1.0
    step: float | None = None
    max_per_step: int | None = DEFAULT_MAX_PER_STEP


@dataclasses.dataclass
class QuantizeSection:
    per_neuron: bool = False


@dataclasses.dataclass
class StreamSection:
    decision_period_s: float = 0.5


@dataclasses.dataclass
class PipelineConfig:
    version: int = CONFIG_VERSION
    seed: int = 7
    data: DataSection = dataclasses.field(default_factory=DataSection)
    preprocess: PreprocessSection = dataclasses.field(default_factory=PreprocessSection)
    filter: FilterSpec = dataclasses.field(default_factory=FilterSpec)
    encoder: EncoderSection = dataclasses.field(default_factory=EncoderSection)
    network: WaveSenseConfig = dataclasses.field(default_factory=WaveSenseConfig)
    # desk-scale schedule; TrainConfig() keeps the long 150-epoch schedule
    train: TrainConfig = dataclasses.field(default_factory=lambda: TrainConfig(epochs=12, learning_rate=0.003, batch_size=32))
    quantize: QuantizeSection = dataclasses.field(default_factory=QuantizeSection)
    stream: StreamSection = dataclasses.field(default_factory=StreamSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        doc = self.to_dict()
        doc.pop("stream")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:12]

    def check(self) -> None:
        """Re-validate every section; raises ConfigError."""
        try:
            pre = self.preprocess
            if self.data.source not in ("synth", "edf"):
                raise ValueError(f"data.source must be 'synth' or 'edf', got {self.data.source!r}")
            if self.data.source == "edf" and not self.data.recordings:
                raise ValueError("data.source 'edf' needs at least one entry in data.recordings")
            corpus.SynthCorpusSpec(**self.data.synth)
            self.filter.check(pre.target_hz)
            self.network.check()
            if self.network.n_input_channels != 2 * len(pre.channels):
                raise ValueError(
                    f"network.n_input_channels must be 2 x {len(pre.channels)} channels (up/down pairs)"
                )
            if abs(self.network.dt * pre.target_hz - 1) > 1e-9:
                raise ValueError("network.dt must equal 1 / preprocess.target_hz")
            if self.encoder.policy not in ("iqr", "fixed"):
                raise ValueError("encoder.policy must be 'iqr' or 'fixed'")
            if self.encoder.policy == "fixed" and not (self.encoder.step or 0) > 0:
                raise ValueError("encoder.step must be positive with the 'fixed' policy")
            if self.encoder.policy == "iqr" and not self.encoder.fraction > 0:
                raise ValueError("encoder.fraction must be positive")
            steps = self.stream.decision_period_s * pre.target_hz
            if steps < 1 or abs(steps - round(steps)) > 1e-9:
                raise ValueError("stream.decision_period_s must be a whole number of samples")
            if not 0 < self.train.train_fraction < 1:
                raise ValueError("train.train_fraction must lie in (0, 1)")
        except ConfigError:
            raise
        except (ValueError, TypeError, SeizureSNNError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc


_SECTIONS = {
    "data": DataSection, "preprocess": PreprocessSection, "filter": FilterSpec, "encoder": EncoderSection,
    "network": WaveSenseConfig, "train": TrainConfig, "quantize": QuantizeSection, "stream": StreamSection,
}


def _section(cls, doc, where: str, base):
    """Overlay ``doc`` on the pipeline default ``base`` for this section."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**{**dataclasses.asdict(base), **doc})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(doc: dict) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(doc) - {"version", "seed", *_SECTIONS})
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    version = doc.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r}")
    seed = doc.get("seed", 7)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    defaults = PipelineConfig()
    sections = {name: _section(cls, doc.get(name, {}), name, getattr(defaults, name))
                for name, cls in _SECTIONS.items()}
    if sections["data"].synth is not None:
        synth = {**dataclasses.asdict(corpus.SynthCorpusSpec()), **sections["data"].synth}
        sections["data"] = dataclasses.replace(sections["data"], synth=synth)
    cfg = PipelineConfig(version=version, seed=seed, **sections)
    cfg.check()
    return cfg


def load_config(path) -> PipelineConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


# ---------------------------------------------------------------------------
# Run directory and artifacts


class Run:
    def __init__(self, config: PipelineConfig, out: Path):
        self.config = config
        self.dir = Path(out) / f"run-{config.digest()}"

    def path(self, *parts) -> Path:
        return self.dir.joinpath(*parts)

    def need(self, *parts) -> Path:
        p = self.path(*parts)
        if not p.exists():
            raise ArtifactMissing(f"missing artifact {p}; run the producing stage first")
        return p

    def write_config(self) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        self.path("config.json").write_text(json.dumps(self.config.to_dict(), indent=2, sort_keys=True) + "\n")


def _recording_sources(run: Run) -> list:
    cfg = run.config
    if cfg.data.source == "synth":
        manifest = run.need("data", "manifest.tsv")
        rows = [line.split("\t") for line in manifest.read_text().splitlines()[1:] if line]
        return [(run.path("data", edf), run.path("data", ann)) for edf, ann in rows]
    return [(Path(r["edf"]), Path(r["annotations"]) if r.get("annotations") else None) for r in cfg.data.recordings]


def load_recordings(run: Run) -> list:
    out = []
    for edf_path, ann_path in _recording_sources(run):
        if not edf_path.exists():
            raise ArtifactMissing(f"missing recording {edf_path}")
        rec = parse_edf(edf_path.read_bytes())
        if ann_path is not None:
            if not ann_path.exists():
                raise ArtifactMissing(f"missing annotations {ann_path}")
            rec = Recording(rec.channel_labels, rec.sample_rate, rec.data,
                            parse_annotations(ann_path.read_text()), rec.calibration, rec.record_duration)
        out.append(rec)
    return out


def preprocessed_recordings(run: Run) -> list:
    pre = run.config.preprocess
    return [corpus.preprocess(r, run.config.filter, pre.channels, pre.target_hz, pre.rereference)
            for r in load_recordings(run)]


def _load_trials(run: Run):
    with np.load(run.need("trials.npz")) as z:
        return {k: z[k] for k in z.files}


def _load_rasters(run: Run):
    with np.load(run.need("rasters.npz")) as z:
        return {k: z[k] for k in z.files}


def _encoded(arrays, split: int, dt: float) -> list:
    sel = np.flatnonzero(arrays["split"] == split)
    return [(SpikeRaster(arrays["counts"][k], dt), int(arrays["labels"][k])) for k in sel]


def _model(run: Run, quantized: bool):
    if quantized:
        return hwmap.load_quantized(run.need("quantized.json"))
    return load_network(run.need("network.json"))


# ---------------------------------------------------------------------------
# Stages


def cmd_synth(run: Run, args) -> None:
    cfg = run.config
    if cfg.data.source != "synth":
        raise ConfigError("synth requires data.source = 'synth'")
    spec = corpus.SynthCorpusSpec(**{**cfg.data.synth, "window_s": cfg.preprocess.window_s})
    recs = corpus.synth_recordings(spec, cfg.seed)
    data_dir = run.path("data")
    data_dir.mkdir(parents=True, exist_ok=True)
    lines = ["edf\tannotations"]
    for k, rec in enumerate(recs):
        edf, ann = f"rec_{k:03d}.edf", f"rec_{k:03d}.tsv"
        (data_dir / edf).write_bytes(write_edf(rec))
        (data_dir / ann).write_text(format_annotations(rec.annotations))
        lines.append(f"{edf}\t{ann}")
    (data_dir / "manifest.tsv").write_text("\n".join(lines) + "\n")
    print(f"synth recordings={len(recs)} dir={data_dir}")


def cmd_preprocess(run: Run, args) -> None:
    cfg = run.config
    pre = cfg.preprocess
    recs = preprocessed_recordings(run)
    trials = corpus.labeled_trials(recs, pre.window_s, pre.overlap_threshold)
    if not trials:
        raise ConfigError("recordings are shorter than one window")
    train_idx, _ = corpus.split_indices(len(trials), cfg.train.train_fraction, cfg.seed)
    split = np.ones(len(trials), dtype=np.int64)
    split[train_idx] = 0
    np.savez(
        run.path("trials.npz"),
        data=np.stack([t.data for t, _ in trials]),
        labels=np.array([int(t.label) for t, _ in trials]),
        origin_s=np.array([t.origin_s for t, _ in trials]),
        recording=np.array([r for _, r in trials]),
        split=split,
        sample_rate=np.float64(pre.target_hz),
    )
    labels = np.array([int(t.label) for t, _ in trials])
    print(f"preprocess trials={len(trials)} ictal={int(labels.sum())} train={int((split == 0).sum())} "
          f"test={int((split == 1).sum())}")


def cmd_encode(run: Run, args) -> None:
    enc = run.config.encoder
    t = _load_trials(run)
    train_data = t["data"][t["split"] == 0]
    if enc.policy == "iqr":
        step = corpus.default_step([x for x in train_data], enc.fraction)
        if np.any(step <= 0):
            raise ConfigError("training data has zero interquartile range; use encoder.policy 'fixed'")
    else:
        step = np.full(t["data"].shape[1], float(enc.step))
    dt = 1.0 / float(t["sample_rate"])
    counts = np.stack([encode(x, step, dt, enc.max_per_step).counts for x in t["data"]])
    np.savez(run.path("rasters.npz"), counts=counts, labels=t["labels"], split=t["split"], step=step)
    print(f"encode trials={len(counts)} step={' '.join(f'{s:.6g}' for s in step)} "
          f"events_per_step={counts.mean() * counts.shape[1]:.4f}")


def cmd_train(run: Run, args) -> None:
    cfg = run.config
    r = _load_rasters(run)
    dt = cfg.network.dt
    net = build_network(cfg.network, cfg.seed)
    net.encoder_step = [float(s) for s in r["step"]]
    net, history = train(net, _encoded(r, 0, dt), cfg.train, test_trials=_encoded(r, 1, dt),
                         history_path=run.path("history.jsonl"))
    save_network(net, run.path("network.json"))
    last = history[-1]
    print(f"train epochs={len(history)} loss={last['loss']:.4f} accuracy={last['accuracy']}")


def cmd_quantize(run: Run, args) -> None:
    net = load_network(run.need("network.json"))
    q = hwmap.quantize(hwmap.extract_graph(net), per_neuron=run.config.quantize.per_neuron)
    violations = hwmap.validate(q)
    if violations:
        run.path("violations.txt").write_text("".join(f"{v}\n" for v in violations))
        raise ValidationFailed(violations)
    hwmap.save_quantized(q, run.path("quantized.json"))
    print(f"quantize weights={sum(p.weight.size for p in q.projections)} hidden={q.n_hidden} "
          f"output={q.n_output}")


def cmd_validate(run: Run, args) -> None:
    if run.path("quantized.json").exists():
        q = hwmap.load_quantized(run.path("quantized.json"))
    else:
        net = load_network(run.need("network.json"))
        q = hwmap.quantize(hwmap.extract_graph(net), per_neuron=run.config.quantize.per_neuron)
    violations = hwmap.validate(q)
    lines = [f"violation\t{v.bound}\t{v.value}\t{v.detail}" for v in violations]
    fan = hwmap.fanouts(q, hidden_only=True)
    lines.append(f"summary\tinputs={q.n_input}\toutputs={q.n_output}\thidden={q.n_hidden}\t"
                 f"weights={sum(p.weight.size for p in q.projections)}\t"
                 f"max_fanout={max((int(a.max()) for a in fan.values() if a.size), default=0)}\tok={int(not violations)}")
    run.path("validation.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if violations:
        raise ValidationFailed(violations)


def _metrics_name(quantized: bool) -> str:
    return "metrics_quantized.json" if quantized else "metrics.json"


def cmd_eval(run: Run, args) -> None:
    r = _load_rasters(run)
    model = _model(run, args.quantized)
    test = _encoded(r, 1, run.config.network.dt)
    pred = predict(model, [x for x, _ in test])
    actual = np.array([y for _, y in test])
    metrics = Metrics.from_predictions(pred, actual)
    doc = {"engine": "fixed" if args.quantized else "float", "n_test": len(test), **metrics.as_dict()}
    tag = "_quantized" if args.quantized else ""
    run.path(f"predictions{tag}.tsv").write_text(
        "trial\tlabel\tprediction\n" + "".join(f"{k}\t{a}\t{p}\n" for k, (a, p) in enumerate(zip(actual, pred)))
    )
    run.path(_metrics_name(args.quantized)).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(" ".join(f"{k}={v}" for k, v in doc.items()))


def _engine_factory(run: Run, model):
    step = np.asarray(_load_rasters(run)["step"])
    period = run.config.stream.decision_period_s
    cap = run.config.encoder.max_per_step
    return lambda: StreamEngine(model, step, period, cap)


def cmd_stream(run: Run, args) -> None:
    model = _model(run, args.quantized)
    factory = _engine_factory(run, model)
    out_dir = run.path("timelines_quantized" if args.quantized else "timelines")
    out_dir.mkdir(exist_ok=True)
    total = 0
    for k, rec in enumerate(preprocessed_recordings(run)):
        timeline = replay(rec, factory())
        with open(out_dir / f"rec_{k:03d}.jsonl", "w") as fh:
            timeline.dump(fh)
        alarms = timeline.alarm_intervals()
        total += len(alarms)
        seizures = ";".join(f"{a.start_s:g}-{a.end_s:g}" for a in rec.annotations)
        spans = ";".join(f"{a:g}-{b:g}" for a, b in alarms)
        print(f"stream rec={k} seizures={seizures or '-'} alarms={spans or '-'}")
    print(f"stream recordings={k + 1} alarms={total} dir={out_dir}")


def cmd_latency(run: Run, args) -> None:
    model = _model(run, args.quantized)
    t = _load_trials(run)
    sel = np.flatnonzero(t["split"] == 1)
    trials = [(t["data"][k], int(t["labels"][k])) for k in sel]
    stat = measure_latency(_engine_factory(run, model), trials)
    tag = "_quantized" if args.quantized else ""
    rows, pos, neg = [], iter(stat.latencies), iter(stat.false_positive_times)
    for k, (_, y) in zip(sel, trials):
        value = next(pos) if y == int(Label.ICTAL) else next(neg)
        rows.append(f"{k}\t{y}\t{'' if value is None else value}\n")
    run.path(f"latency{tag}.tsv").write_text("trial\tlabel\tfirst_positive_s\n" + "".join(rows))
    run.path(f"latency{tag}.json").write_text(json.dumps(stat.as_dict(), indent=2, sort_keys=True) + "\n")
    print(" ".join(f"{k}={v}" for k, v in stat.as_dict().items()))


def cmd_report(run: Run, args) -> None:
    series = run.path("series")
    series.mkdir(exist_ok=True)
    lines = ["# metrics", "engine\taccuracy\tsensitivity\tspecificity\tf1\tn_test"]
    for quantized in (False, True):
        p = run.path(_metrics_name(quantized))
        if p.exists():
            m = json.loads(p.read_text())
            lines.append("\t".join(str(m.get(k)) for k in ("engine", "accuracy", "sensitivity", "specificity", "f1", "n_test")))
    if run.path("predictions.tsv").exists() and run.path("predictions_quantized.tsv").exists():
        a = np.loadtxt(run.path("predictions.tsv"), skiprows=1, dtype=int, ndmin=2)[:, 2]
        b = np.loadtxt(run.path("predictions_quantized.tsv"), skiprows=1, dtype=int, ndmin=2)[:, 2]
        lines.append(f"agreement\t{float(np.mean(a == b))}")
    for tag in ("", "_quantized"):
        p = run.path(f"latency{tag}.json")
        if p.exists():
            stat = json.loads(p.read_text())
            lines += [f"# latency{tag or ''}", "\t".join(f"{k}={v}" for k, v in sorted(stat.items()))]
            rows = run.path(f"latency{tag}.tsv").read_text().splitlines()[1:]
            pts = [r.split("\t") for r in rows if r.split("\t")[1] == "1"]
            (series / f"latency_scatter{tag}.tsv").write_text(
                "trial\tlatency_s\n" + "".join(f"{k}\t{v}\n" for k, _, v in pts if v)
            )
    hist = run.path("history.jsonl")
    if hist.exists():
        rows = [json.loads(x) for x in hist.read_text().splitlines() if x]
        keys = ("epoch", "loss", "accuracy", "sensitivity", "specificity", "f1")
        (series / "training_curve.tsv").write_text(
            "\t".join(keys) + "\n" + "".join("\t".join(str(r[k]) for k in keys) + "\n" for r in rows)
        )
    timeline = run.path("timelines", "rec_000.jsonl")
    if timeline.exists():
        rows = [json.loads(x) for x in timeline.read_text().splitlines() if x]
        (series / "timeline.tsv").write_text(
            "time_s\tdecision\talarm\n" + "".join(f"{r['time_s']}\t{r['decision']}\t{r['alarm']}\n" for r in rows)
        )
    run.path("report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"series dir={series}")


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="seizure-snn", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="pipeline config JSON (defaults used when omitted)")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--out", default="runs", help="parent directory for run directories")
    ap.add_argument("--quantized", action="store_true", help="use the fixed-point engine (eval/stream/latency)")
    ap.add_argument("--decision-period", type=float, help="override stream.decision_period_s")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.decision_period is not None:
        cfg = dataclasses.replace(cfg, stream=StreamSection(args.decision_period))
    cfg.check()
    return cfg


_EXIT = {ConfigError: 2, ArtifactMissing: 3, ValidationFailed: 4}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        run = Run(cfg, Path(args.out))
        run.write_config()
        HANDLERS[args.command](run, args)
    except (SeizureSNNError, ValueError, OSError) as exc:
        doc = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        if isinstance(exc, ValidationFailed):
            doc["violations"] = [
                {"bound": v.bound, "value": v.value, "detail": v.detail} for v in exc.violations
            ]
        print("error: " + json.dumps(doc, default=str), file=sys.stderr)
        return next((code for cls, code in _EXIT.items() if isinstance(exc, cls)), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
