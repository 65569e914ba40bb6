import json

import numpy as np
import pytest

from burstcast import cli, experiments
from burstcast.cli import main

CONFIG = {
    "data": {"synth": {"n_geographies": 3, "n_weeks": 400, "seed": 5}},
    "train": {"max_epochs": 2, "learning_rate": 1e-3},
    "models": {
        "list": ["seasonal_naive", "moving_average", "linear", "sarima", "bilstm"],
        "lookback": 6,
        "hidden": {"bilstm": [4, 4], "uni_lstm": [4, 4], "lstm_attention": [4, 4]},
        "dense": 4,
        "sarima_grid": [[0, 0, 0, 0], [1, 0, 0, 0]],
    },
    "ablations": {"sequence_lengths": [4, 6, 8], "seqlen_baseline": 6},
}


@pytest.fixture
def cfg_path(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("BURSTCAST_SEED", raising=False)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(CONFIG))
    return p


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}


def test_synth_twice_is_byte_identical(cfg_path, tmp_path):
    assert main(["synth", "--config", str(cfg_path), "--seed", "42", "--out", "a"]) == 0
    assert main(["synth", "--config", str(cfg_path), "--seed", "42", "--out", "b"]) == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")
    assert {"synth_panel.json", "synth_panel.csv", "synth_raw.csv"} <= set(files(tmp_path / "a"))


def test_ingest_synthetic_csv(cfg_path, tmp_path, capsys):
    main(["synth", "--config", str(cfg_path), "--out", "s"])
    assert main(["ingest", "--input", "s/synth_raw.csv", "--out", "p/panel.json"]) == 0
    report = json.loads((tmp_path / "p" / "panel.report.json").read_text())
    assert report["rejected"] == 0 and report["excluded_week_records"] == 0


def test_ingest_reports_1993_rows(cfg_path, tmp_path):
    raw = tmp_path / "raw.csv"
    raw.write_text(
        "eventid,iyear,imonth,iday,region,country,nkill,nwound,doubtterr\n"
        "1,1992,6,1,1,10,0,0,0\n2,1993,6,15,1,10,0,0,0\n3,1994,6,15,2,20,1,0,0\n"
    )
    assert main(["ingest", "--input", str(raw), "--out", "panel.csv", "--grain", "country"]) == 0
    report = json.loads((tmp_path / "panel.report.json").read_text())
    assert report["excluded_week_records"] == 1


def test_ingest_missing_input(cfg_path, capsys):
    assert main(["ingest", "--input", "nowhere.csv", "--out", "x.json"]) == 2
    assert "nowhere.csv" in capsys.readouterr().err


def test_ingest_parse_failure_names_row(cfg_path, tmp_path, capsys):
    raw = tmp_path / "bad.csv"
    raw.write_text("eventid,iyear,imonth,iday,region,country\n1,19x0,1,1,1,1\n")
    assert main(["ingest", "--input", str(raw), "--out", "x.json"]) != 0
    assert "row 2" in capsys.readouterr().err
    assert not (tmp_path / "x.json").exists()


def test_ablate_seqlen_three_rows_and_seed_override(cfg_path, tmp_path):
    assert main(["ablate", "--config", str(cfg_path), "--family", "seqlen", "--seed", "7", "--out", "r"]) == 0
    doc = json.loads((tmp_path / "r" / "seqlen_results.json").read_text())
    assert [r["config_label"] for r in doc["rows"]] == ["L=4", "L=6", "L=8"]
    assert doc["metadata"]["seed"] == 7
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["seed_source"] == "flag"
    assert manifest["status"] == "ok" and manifest["finished_at"]
    assert manifest["resolved_config"]["seed"] == 7
    assert manifest["config_hash"] == experiments.ExperimentConfig.from_dict(manifest["resolved_config"]).config_hash()


def test_seed_precedence(cfg_path, monkeypatch):
    monkeypatch.setenv("BURSTCAST_SEED", "11")
    assert cli.resolve_seed(None, 42) == (11, "env")
    assert cli.resolve_seed(3, 42) == (3, "flag")
    monkeypatch.delenv("BURSTCAST_SEED")
    assert cli.resolve_seed(None, 42) == (42, "config")


def test_schema_violation_lists_keys_and_writes_nothing(cfg_path, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"data": {"synth": {}}, "modles": {}, "train": {"epochs": 3}}))
    assert main(["train", "--config", str(bad), "--out", "t"]) != 0
    err = capsys.readouterr().err
    assert "modles" in err and "train.epochs" in err
    assert not (tmp_path / "t").exists()


def test_crash_leaves_no_partial_outputs(cfg_path, tmp_path, monkeypatch):
    def explode(*a, **k):
        raise ValueError("boom")

    monkeypatch.setattr(cli, "run_family", explode)
    assert main(["ablate", "--config", str(cfg_path), "--out", "r"]) == 1
    assert sorted(p.name for p in tmp_path.iterdir()) == ["cfg.json"]


def test_failed_row_gives_nonzero_exit(cfg_path, tmp_path, monkeypatch):
    def singular(*a, **k):
        raise np.linalg.LinAlgError("singular")

    monkeypatch.setattr(experiments, "linear_fit", singular)
    assert main(["ablate", "--config", str(cfg_path), "--family", "main", "--out", "r"]) == 1
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["status"] == "rows_failed"


def test_train_baseline_and_report(cfg_path, tmp_path):
    assert main(["train", "--config", str(cfg_path), "--out", "t"]) == 0
    assert {"train_bilstm.ckpt.json", "train_bilstm.history.csv"} <= set(files(tmp_path / "t"))
    assert main(["baseline", "--config", str(cfg_path), "--out", "b"]) == 0
    lin = json.loads((tmp_path / "b" / "baseline_linear.json").read_text())
    assert lin["kind"] == "linear" and len(lin["coef"]) == 16
    assert main(["ablate", "--config", str(cfg_path), "--family", "seqlen", "--out", "r"]) == 0
    assert main(["report", "--tables", "r", "--out", "rep"]) == 0
    assert (tmp_path / "rep" / "report.md").read_text().count("L=") >= 3
    assert (tmp_path / "rep" / "report_seqlen.csv").exists()


def test_missing_config_file(cfg_path, capsys):
    assert main(["ablate", "--config", "nope.json"]) == 2
    assert "nope.json" in capsys.readouterr().err


def test_missing_panel_file(cfg_path, tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"data": {"panel": "absent.json"}}))
    assert main(["ablate", "--config", str(p)]) == 2
