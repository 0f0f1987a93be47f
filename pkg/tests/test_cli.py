import json
import subprocess
import sys

import numpy as np
import pytest

from fairsampling.cli import (EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_OK, EXIT_VERDICT,
                              main)

from helpers import rating_log


@pytest.fixture
def log_file(tmp_path):
    path = tmp_path / "ratings.tsv"
    path.write_text(rating_log(n_users=60, n_items=50, per_user=25, seed=1))
    return path


def _manifest(directory):
    return json.loads((directory / "manifest.json").read_text())


def test_pipeline_end_to_end(tmp_path, log_file, capsys):
    split, run, ev = tmp_path / "split", tmp_path / "run", tmp_path / "ev"
    assert main(["prepare", "--input", str(log_file), "--out", str(split), "--k-core", "3"]) == EXIT_OK
    assert {p.name for p in split.iterdir()} >= {"train.tsv", "val.tsv", "test.tsv", "split.json", "manifest.json"}
    assert main(["train", "--data", str(split), "--out", str(run), "--objective", "point_fs",
                 "--epochs", "2", "--batch-positives", "64"]) == EXIT_OK
    assert main(["evaluate", "--checkpoint", str(run / "model.ckpt"), "--data", str(split),
                 "--out", str(ev), "--k", "5", "10"]) == EXIT_OK
    report = json.loads((ev / "report.json").read_text())
    assert set(report["metrics"]) == {"5", "10"}
    assert report["metadata"]["objective"] == "point_fs"
    assert main(["compare", str(ev), str(ev / "report.json"), "--names", "a,b", "--k", "10"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "NDCG@10" in out and "\na " in out
    assert main(["model-inspect", str(run / "model.ckpt")]) == EXIT_OK
    assert "n_items:" in capsys.readouterr().out
    m = _manifest(run)
    assert m["command"] == "train" and m["config"]["objective"] == "point_fs"
    assert "created_at" in m and "init" in m["seeds"]


def test_overwrite_guard(tmp_path, log_file):
    out = tmp_path / "split"
    args = ["prepare", "--input", str(log_file), "--out", str(out), "--k-core", "3"]
    assert main(args) == EXIT_OK
    assert main(args) == EXIT_CONFIG
    assert main(args + ["--overwrite"]) == EXIT_OK
    assert len(list(out.glob("manifest*"))) == 1


def test_config_file_precedence(tmp_path):
    syn = tmp_path / "syn"
    assert main(["synth", "--out", str(syn), "--n-users", "30", "--n-items", "40", "--holdout-per-user", "10"]) == EXIT_OK
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"epochs": 2, "l2": 0.5, "objective": "pair_classic"}))
    assert main(["train", "--data", str(syn), "--out", str(tmp_path / "r"), "--config", str(conf),
                 "--epochs", "1"]) == EXIT_OK
    c = _manifest(tmp_path / "r")["config"]
    assert (c["epochs"], c["l2"], c["objective"], c["batch_positives"]) == (1, 0.5, "pair_classic", 256)
    conf.write_text(json.dumps({"epoch": 2}))
    assert main(["train", "--data", str(syn), "--out", str(tmp_path / "r2"),
                 "--config", str(conf)]) == EXIT_CONFIG


def test_synth_without_skew_writes_unit_propensities(tmp_path):
    out = tmp_path / "s"
    assert main(["synth", "--out", str(out), "--alpha", "0", "--item-skew", "0", "--user-skew", "0",
                 "--n-users", "10", "--n-items", "40", "--holdout-per-user", "5"]) == EXIT_OK
    for name in ("theta_user.tsv", "theta_item.tsv"):
        assert np.all(np.loadtxt(out / name)[:, 1] == 1.0)
    assert _manifest(out)["theta_rescale"] == 1.0


def test_data_error_exit_codes(tmp_path, log_file):
    bad = tmp_path / "bad.tsv"
    bad.write_text("a\tb\t5\nc\td\n")
    assert main(["prepare", "--input", str(bad), "--out", str(tmp_path / "x")]) == EXIT_DATA
    assert main(["prepare", "--input", str(log_file), "--out", str(tmp_path / "y"),
                 "--min-rating", "6"]) == EXIT_DATA
    assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path / "z")]) == EXIT_DATA
    assert main(["model-inspect", str(bad)]) == EXIT_DATA


def test_config_error_exit_code(tmp_path):
    syn = tmp_path / "syn"
    main(["synth", "--out", str(syn), "--n-users", "20", "--n-items", "30", "--holdout-per-user", "10"])
    assert main(["train", "--data", str(syn), "--out", str(tmp_path / "r"),
                 "--learning-rate", "-1"]) == EXIT_CONFIG
    assert main(["synth", "--out", str(tmp_path / "s2"), "--ceiling", "2"]) == EXIT_CONFIG


def test_divergence_exit_code(tmp_path):
    syn = tmp_path / "syn"
    main(["synth", "--out", str(syn), "--n-users", "30", "--n-items", "40", "--holdout-per-user", "10"])
    out = tmp_path / "r"
    assert main(["train", "--data", str(syn), "--out", str(out), "--objective", "point_classic",
                 "--learning-rate", "1e300", "--epochs", "3"]) == EXIT_DIVERGED
    assert json.loads((out / "train_report.json").read_text())["diagnostic"]


def test_grid_search_selects_a_point(tmp_path):
    syn = tmp_path / "syn"
    main(["synth", "--out", str(syn), "--n-users", "30", "--n-items", "40", "--holdout-per-user", "10"])
    out = tmp_path / "g"
    assert main(["train", "--data", str(syn), "--out", str(out), "--epochs", "2",
                 "--grid", "learning_rate=0.1,1.0", "--grid", "d=2,4", "--grid-k", "5"]) == EXIT_OK
    grid = json.loads((out / "grid.json").read_text())
    assert len(grid) == 4
    best = max(grid, key=lambda r: r["ndcg"])
    sel = _manifest(out)["selected"]
    assert sel["learning_rate"] == best["learning_rate"] and sel["model"]["d"] == best["d"]


def test_experiment_verdict_exit_code(tmp_path):
    code = main(["experiment", "--seeds", "1", "--epochs", "1", "--n-users", "30", "--n-items", "40",
                 "--holdout-per-user", "10", "--k", "5", "--out", str(tmp_path / "e")])
    verdict = json.loads((tmp_path / "e" / "experiment.json").read_text())["verdict"]
    assert code == (EXIT_OK if verdict["pass"] else EXIT_VERDICT)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "fairsampling", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == "0.1.0"


def test_prepare_defaults_follow_the_published_protocol():
    from fairsampling.cli import DEFAULTS
    d = DEFAULTS["prepare"]
    assert (d["min_rating"], d["k_core"], d["ratios"]) == (4.0, 20, "0.7,0.1,0.2")


def test_synth_train_count_matches_expectation(tmp_path):
    out = tmp_path / "s"
    assert main(["synth", "--out", str(out), "--seed", "12"]) == EXIT_OK
    info = json.loads((out / "synth.json").read_text())
    from fairsampling.synthworld import SyntheticConfig, generate_world, interaction_prob
    w = generate_world(SyntheticConfig(seed=12))
    p = interaction_prob(w.relevance_prob, w.theta_user, w.theta_item, w.alpha)
    n = sum(1 for _ in open(out / "train.tsv"))
    assert n == info["n_train"]
    assert abs(n - p.sum()) < 3 * np.sqrt((p * (1 - p)).sum())
