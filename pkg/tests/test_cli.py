from __future__ import annotations

import csv
import json
import shutil
import subprocess
import sys

import pytest

from quantcal import cli


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = cli.synth.write_text_fixture(root / "fixture", seed=0)
    ws = root / "ws"
    assert cli.main(["run-all", "--config", str(cfg), "--workspace", str(ws)]) == 0
    return cfg, ws


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_full_pipeline_outputs(pipeline):
    cfg, ws = pipeline
    for name in ("sweep.csv", "cell_means.csv", "figure3.csv", "figure4.csv", "table1.csv", "summary.txt"):
        assert (ws / name).stat().st_size > 0
    sweep = rows(ws / "sweep.csv")
    shares = [float(r["cumulative_share"]) for r in sweep]
    assert all(b >= a for a, b in zip(shares, shares[1:])) and shares[-1] == 1.0
    assert len(rows(ws / "cell_means.csv")) == 8
    report = dict(line.split("=", 1) for line in (ws / "filter_report.txt").read_text().split())
    assert int(report["excluded_author"]) == 5 and int(report["small_community"]) == 30


def test_fixture_estimates_track_fixture_truth(pipeline):
    cfg, ws = pipeline
    est = {r["community"]: r for r in rows(ws / "estimates.csv")}
    political = set(json.loads(cfg.read_text())["political_communities"])
    for name, r in est.items():
        assert (r["choice"] == "political") == (name in political)
        p = float(r["p_subr"])
        assert (p > 0.5) if name in political else (p < 0.35)


def test_manifests_record_hash_and_seed(pipeline):
    cfg, ws = pipeline
    conf = cli.PipelineConfig.load(cfg)
    for stage in cli.PIPELINE:
        man = json.loads(cli.manifest_path(ws, stage).read_text())
        assert man["stage"] == stage and man["config_hash"] == conf.hash() and man["seed"] == conf.seed
        assert set(man["outputs"]) == set(cli.STAGES[stage].outputs)


@pytest.mark.parametrize("stage", cli.PIPELINE)
def test_replay_is_byte_identical(pipeline, stage, tmp_path):
    cfg, ws = pipeline
    copy = tmp_path / "ws"
    shutil.copytree(ws, copy)
    before = {p.name: p.read_bytes() for p in copy.iterdir() if p.is_file()}
    ok, diff = cli.replay(cli.manifest_path(copy, stage))
    assert ok, diff
    after = {p.name: p.read_bytes() for p in copy.iterdir() if p.is_file()}
    assert before == after


def test_missing_upstream_names_stage(tmp_path, capsys):
    cfg = cli.synth.write_text_fixture(tmp_path / "fx")
    assert cli.main(["estimate", "--config", str(cfg), "--workspace", str(tmp_path / "ws")]) == cli.EXIT_UPSTREAM
    assert "stratify" in capsys.readouterr().err


def test_stale_and_tampered_inputs(pipeline, tmp_path, capsys):
    cfg, ws = pipeline
    copy = tmp_path / "ws"
    shutil.copytree(ws, copy)
    assert cli.main(["sweep", "--config", str(cfg), "--workspace", str(copy), "--seed", "99"]) == cli.EXIT_UPSTREAM
    assert "config" in capsys.readouterr().err
    with open(copy / "estimates.csv", "a") as fh:
        fh.write("x\n")
    assert cli.main(["sweep", "--config", str(cfg), "--workspace", str(copy)]) == cli.EXIT_UPSTREAM
    assert "estimate" in capsys.readouterr().err


def test_config_violation_names_field(tmp_path, capsys):
    bad = tmp_path / "c.json"
    for field, value in (("political_cutoff", 1.5), ("n_pol", 100), ("aggregation", "most"), ("no_such", 1)):
        bad.write_text(json.dumps({field: value}))
        assert cli.main(["ingest", "--config", str(bad), "--workspace", str(tmp_path / "ws")]) == cli.EXIT_CONFIG
        assert field in capsys.readouterr().err


def test_lock_refuses_concurrent_run(pipeline, tmp_path):
    cfg, ws = pipeline
    copy = tmp_path / "ws"
    shutil.copytree(ws, copy)
    (copy / ".lock").write_text("123")
    assert cli.main(["sweep", "--config", str(cfg), "--workspace", str(copy)]) == cli.EXIT_LOCKED
    (copy / ".lock").unlink()
    assert cli.main(["sweep", "--config", str(cfg), "--workspace", str(copy)]) == 0
    assert not (copy / ".lock").exists()


def test_workspace_from_environment(tmp_path, monkeypatch):
    cfg = cli.synth.write_text_fixture(tmp_path / "fx")
    monkeypatch.setenv("QUANTCAL_WORKSPACE", str(tmp_path / "envws"))
    assert cli.main(["ingest", "--config", str(cfg)]) == 0
    assert (tmp_path / "envws" / "corpus.jsonl").exists()


def test_synth_validate_small(tmp_path):
    conf = {"synth": {"runs": 4, "n_communities": 12, "comments": 800, "n_pol": 600, "n_nonpol": 1200,
                      "floor": 20}}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(conf))
    ws = tmp_path / "ws"
    assert cli.main(["synth-validate", "--config", str(path), "--workspace", str(ws), "--threads", "2"]) == 0
    report = dict(line.split("=", 1) for line in (ws / "synth_report.txt").read_text().split())
    assert int(report["runs"]) == 4 and 0.0 <= float(report["coverage"]) <= 1.0
    assert len(rows(ws / "synth_coverage.csv")) == 4
    ok, diff = cli.replay(cli.manifest_path(ws, "synth-validate"))
    assert ok, diff


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "quantcal.cli", "make-fixture", str(tmp_path / "fx")],
                         capture_output=True, text=True)
    assert out.returncode == 0 and (tmp_path / "fx" / "config.json").exists()
