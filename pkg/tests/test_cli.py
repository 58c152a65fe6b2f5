import json

import numpy as np
import pytest

from seizure_snn import cli
from seizure_snn.network import WaveSenseConfig, build_network, save_network

TINY = {
    "seed": 3,
    "data": {"synth": {"n_recordings": 4, "duration_s": 20.0, "seizure_s": 10.0}},
    "network": {"n_blocks": 2, "neurons_per_block": 8, "readout_hidden": 8},
    "train": {"epochs": 2, "batch_size": 8},
}


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run_stage(tmp_path, command, config, *extra):
    return cli.main([command, "--config", config, "--out", str(tmp_path / "runs"), *extra])


def run_dir(tmp_path):
    (d,) = (tmp_path / "runs").iterdir()
    return d


def error_doc(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: ")
    return json.loads(err[0][len("error: "):])


# --- config ----------------------------------------------------------------------


def test_empty_config_is_default():
    assert cli.config_from_dict({}) == cli.PipelineConfig()


def test_config_round_trip():
    cfg = cli.config_from_dict(TINY)
    again = cli.config_from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg and again.digest() == cfg.digest()


def test_partial_section_keeps_defaults():
    cfg = cli.config_from_dict({"train": {"epochs": 3}})
    assert cfg.train.epochs == 3
    assert cfg.train.learning_rate == cli.PipelineConfig().train.learning_rate


def test_stream_section_excluded_from_digest():
    a = cli.config_from_dict({})
    b = cli.config_from_dict({"stream": {"decision_period_s": 1.0}})
    assert a.digest() == b.digest()


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"train": {"epochz": 3}},
    {"version": 99},
    {"seed": "x"},
    {"stream": {"decision_period_s": 0.001}},
    {"network": {"n_input_channels": 3}},
    {"network": {"n_blocks": 8, "neurons_per_block": 130}},
])
def test_bad_config_exits_2(tmp_path, capsys, doc):
    assert run_stage(tmp_path, "synth", write_config(tmp_path, doc)) == 2
    assert error_doc(capsys)["error"] == "ConfigError"


def test_missing_config_file_exits_2(tmp_path, capsys):
    assert run_stage(tmp_path, "synth", str(tmp_path / "nope.json")) == 2


# --- stages ----------------------------------------------------------------------


def test_synth_deterministic(tmp_path):
    cfg = write_config(tmp_path, TINY)
    files = []
    for out in ("a", "b"):
        assert cli.main(["synth", "--config", cfg, "--out", str(tmp_path / out)]) == 0
        (d,) = (tmp_path / out).iterdir()
        files.append({p.name: p.read_bytes() for p in sorted((d / "data").iterdir())})
    assert files[0] == files[1] and len(files[0]) == 9


def test_seed_changes_run(tmp_path):
    cfg = write_config(tmp_path, TINY)
    for seed in ("1", "2"):
        assert cli.main(["synth", "--config", cfg, "--out", str(tmp_path / seed), "--seed", seed]) == 0
    a, b = (next((tmp_path / s).iterdir()) for s in ("1", "2"))
    assert a.name != b.name
    assert (a / "data" / "rec_000.edf").read_bytes() != (b / "data" / "rec_000.edf").read_bytes()


@pytest.mark.parametrize("command", ["preprocess", "train", "quantize", "eval", "stream", "latency"])
def test_missing_artifacts_exit_3(tmp_path, capsys, command):
    assert run_stage(tmp_path, command, write_config(tmp_path, TINY)) == 3
    assert error_doc(capsys)["error"] == "ArtifactMissing"


def test_oversized_network_fails_validation(tmp_path, capsys):
    # wider blocks pass the config check but overflow the per-neuron fanout
    cfg = write_config(tmp_path, {"network": {"neurons_per_block": 24}})
    run = cli.Run(cli.load_config(cfg), tmp_path / "runs")
    run.dir.mkdir(parents=True)
    save_network(build_network(cli.load_config(cfg).network, 0), run.path("network.json"))
    assert run_stage(tmp_path, "quantize", cfg) == 4
    doc = error_doc(capsys)
    assert doc["error"] == "ValidationFailed"
    assert doc["violations"] and all(v["bound"] == "fanout > 32" for v in doc["violations"])
    assert not run.path("quantized.json").exists()
    assert run.path("violations.txt").exists()


def test_tiny_pipeline(tmp_path, capsys):
    cfg = write_config(tmp_path, TINY)
    for command in ("synth", "preprocess", "encode", "train", "quantize", "validate", "eval"):
        assert run_stage(tmp_path, command, cfg) == 0, command
    for command in ("eval", "stream", "latency"):
        assert run_stage(tmp_path, command, cfg, "--quantized") == 0, command
    assert run_stage(tmp_path, "stream", cfg) == 0
    assert run_stage(tmp_path, "latency", cfg) == 0
    assert run_stage(tmp_path, "report", cfg) == 0
    d = run_dir(tmp_path)
    for name in ("config.json", "trials.npz", "rasters.npz", "network.json", "quantized.json", "history.jsonl",
                 "metrics.json", "metrics_quantized.json", "latency.json", "report.txt", "validation.txt"):
        assert (d / name).exists(), name
    assert len(list((d / "timelines").iterdir())) == 4
    assert len((d / "history.jsonl").read_text().splitlines()) == 2
    metrics = json.loads((d / "metrics.json").read_text())
    assert 0.0 <= metrics["accuracy"] <= 1.0
    report = (d / "report.txt").read_text()
    assert "agreement" in report
    with np.load(d / "trials.npz") as z:
        assert set(np.unique(z["split"])) == {0, 1}


def test_config_written_materialized(tmp_path):
    cfg = write_config(tmp_path, TINY)
    assert run_stage(tmp_path, "synth", cfg) == 0
    written = json.loads((run_dir(tmp_path) / "config.json").read_text())
    assert cli.config_from_dict(written) == cli.load_config(cfg)
    assert written["train"]["learning_rate"] == cli.PipelineConfig().train.learning_rate


def test_decision_period_override(tmp_path):
    args = cli.build_parser().parse_args(["stream", "--decision-period", "1.0"])
    assert cli.resolve_config(args).stream.decision_period_s == 1.0
    assert WaveSenseConfig().n_input_channels == 2 * len(cli.PipelineConfig().preprocess.channels)
