import json
import subprocess
import sys

import pytest

from bayesdrop.cli import main

SMALL = ["--n-informative", "3", "--n-noise", "5", "--n-train", "60", "--n-valid", "20", "--n-test", "40"]


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


@pytest.fixture
def data_dir(tmp_path):
    out = tmp_path / "data"
    assert main(["gen-data", "--seed", "1", "--out-dir", str(out)] + SMALL) == 0
    return out


def test_gen_data_writes_files_and_manifest(data_dir):
    for name in ("train", "valid", "test"):
        lines = (data_dir / f"{name}.csv").read_text().splitlines()
        assert lines[0].startswith("label,informative1,informative2,informative3,noise1")
    assert len((data_dir / "train.csv").read_text().splitlines()) == 61
    man = json.loads((data_dir / "manifest.json").read_text())
    assert man["command"] == "gen-data"
    assert man["config"]["n_train"] == 60
    assert man["artifacts"]["test"] == "test.csv"
    assert 0.5 < man["bayes_optimal"] < 1


def test_gen_data_repeat_seed_identical(data_dir, tmp_path):
    again = tmp_path / "again"
    assert main(["gen-data", "--seed", "1", "--out-dir", str(again)] + SMALL) == 0
    for name in ("train.csv", "valid.csv", "test.csv"):
        assert read(data_dir / name) == read(again / name)


def test_gen_data_default_paper_shape(tmp_path):
    # only count rows and columns; the full default set is 23000 x 1000
    out = tmp_path / "paper"
    assert main(["gen-data", "--out-dir", str(out), "--n-test", "10"]) == 0
    with open(out / "train.csv") as fh:
        header = fh.readline().split(",")
        rows = sum(1 for _ in fh)
    assert len(header) == 1001 and rows == 2000
    assert sum(1 for _ in open(out / "valid.csv")) == 1001


def test_gen_data_pure_noise(tmp_path):
    out = tmp_path / "noise"
    assert main(["gen-data", "--scale", "smoke", "--n-informative", "0", "--out-dir", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["bayes_optimal"] == 0.5
    assert man["config"]["n_noise"] == 45


def test_gen_data_config_file_and_precedence(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"n_informative": 2, "n_noise": 2, "n_train": 7, "n_valid": 3, "n_test": 3,
                                "seed": 4}))
    out = tmp_path / "o"
    assert main(["gen-data", "--config", str(conf), "--n-train", "9", "--out-dir", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["n_train"] == 9 and man["config"]["seed"] == 4 and man["config"]["n_valid"] == 3


def test_bad_config_reports_error(tmp_path, capsys):
    conf = tmp_path / "c.json"
    conf.write_text("{\n  \"seed\": 1,\n  oops\n}")
    assert main(["gen-data", "--config", str(conf), "--out-dir", str(tmp_path)]) == 2
    assert "line 3" in capsys.readouterr().err
    conf.write_text(json.dumps({"colour": "blue"}))
    assert main(["gen-data", "--config", str(conf), "--out-dir", str(tmp_path)]) == 2
    assert "colour" in capsys.readouterr().err


def test_train_zero_iterations_emits_initial_checkpoint(data_dir, tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--algorithm", "mle", "--iterations", "0", "--data", str(data_dir),
                 "--out-dir", str(out)]) == 0
    assert read(out / "model.txt").decode().startswith("logistic_regression n=8 bias=0.0 fit_bias=0 theta=0.0,")
    assert not (out / "mask.txt").exists()
    assert (out / "progress.log").read_text() == ""


def test_train_for_writes_checkpoints_and_progress(data_dir, tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--algorithm", "for", "--delta", "1e-3", "--iterations", "150",
                 "--progress-every", "50", "--data", str(data_dir / "train.csv"), "--out-dir", str(out)]) == 0
    assert read(out / "mask.txt").startswith(b"mask_distribution mode=per_feature dim=8 logits=")
    recs = [json.loads(line) for line in (out / "progress.log").read_text().splitlines()]
    assert [r["iteration"] for r in recs] == [50, 100, 150]
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["delta"] == 1e-3 and man["config"]["algorithm"] == "for"
    assert set(man["artifacts"]) == {"model", "mask", "progress"}


def test_train_rerun_from_manifest_identical(data_dir, tmp_path):
    first, second = tmp_path / "r1", tmp_path / "r2"
    assert main(["train", "--algorithm", "uor", "--iterations", "300", "--a", "0.01", "--c", "0.01",
                 "--seed", "9", "--data", str(data_dir), "--out-dir", str(first)]) == 0
    assert main(["train", "--config", str(first / "manifest.json"), "--out-dir", str(second)]) == 0
    for name in ("model.txt", "mask.txt", "progress.log"):
        assert read(first / name) == read(second / name)


def test_train_non_finite_exits_nonzero(tmp_path, capsys):
    data = tmp_path / "d"
    assert main(["gen-data", "--out-dir", str(data), "--feature-std", "1e150"] + SMALL) == 0
    code = main(["train", "--algorithm", "mle", "--a", "1e160", "--iterations", "20", "--data", str(data),
                 "--out-dir", str(tmp_path / "r")])
    assert code != 0
    assert "non-finite" in capsys.readouterr().err


def test_train_missing_data(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "nope.csv"), "--out-dir", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err


def test_train_malformed_data(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("label,x1\n1,0.3\n0,zz\n")
    assert main(["train", "--data", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_eval_on_trained_run(data_dir, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--algorithm", "for", "--iterations", "500", "--a", "0.05",
                 "--data", str(data_dir), "--out-dir", str(run)]) == 0
    capsys.readouterr()
    assert main(["eval", "--model", str(run), "--data", str(data_dir), "--out-dir", str(tmp_path / "ev")]) == 0
    assert "gaussian" in capsys.readouterr().out
    res = json.loads((tmp_path / "ev" / "eval.json").read_text())
    assert 0 <= res["accuracy"] <= 1 and res["n_samples"] == 40
    for kind in ("plain", "expected_mask", "enumerate", "monte_carlo"):
        assert main(["eval", "--model", str(run), "--predictor", kind, "--samples", "200",
                     "--data", str(data_dir / "test.csv"), "--out-dir", str(tmp_path / kind)]) == 0


def test_eval_rejects_mismatched_data(data_dir, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--algorithm", "mle", "--iterations", "10", "--data", str(data_dir),
                 "--out-dir", str(run)]) == 0
    other = tmp_path / "other"
    assert main(["gen-data", "--scale", "smoke", "--out-dir", str(other)]) == 0
    assert main(["eval", "--model", str(run), "--data", str(other), "--out-dir", str(tmp_path)]) == 2
    assert "features" in capsys.readouterr().err


def test_experiment_smoke_outputs(tmp_path):
    out = tmp_path / "exp"
    assert main(["experiment", "--scale", "smoke", "--iterations", "2000", "--out-dir", str(out)]) == 0
    doc = json.loads((out / "result.json").read_text())
    assert [r["algorithm"] for r in doc["algorithms"]] == ["mle", "fixed", "uor", "for"]
    for r in doc["algorithms"]:
        assert set(r) >= {"algorithm", "predictor", "test_accuracy", "schedule", "keep_probs"}
        assert 0 <= r["test_accuracy"] <= 1
    assert len(doc["algorithms"][3]["keep_probs"]) == 50
    assert len((out / "accuracy.csv").read_text().splitlines()) == 6
    assert len((out / "dropout_rates.csv").read_text().splitlines()) == 51
    man = json.loads((out / "manifest.json").read_text())
    assert man["timings"]["total_seconds"] > 0
    assert set(man["artifacts"].values()) == {"result.json", "accuracy.csv", "dropout_rates.csv"}


def test_experiment_failure_sets_exit_status(tmp_path, monkeypatch, capsys):
    from bayesdrop import evaluation as ev
    from bayesdrop.synthetic_data import DataConfig

    monkeypatch.setitem(ev.SCALE_DATA, "smoke", DataConfig(n_informative=2, n_noise=2, n_train=20,
                                                           n_valid=10, n_test=10, feature_std=1e150))
    monkeypatch.setitem(ev.BEST_CELLS, "smoke", {**ev.BEST_CELLS["smoke"], "mle": (1e160, 1e4, None, None)})
    out = tmp_path / "exp"
    assert main(["experiment", "--algorithms", "mle,fixed", "--iterations", "50", "--out-dir", str(out)]) == 1
    assert "mle    FAILED" in capsys.readouterr().err
    doc = json.loads((out / "result.json").read_text())
    assert doc["algorithms"][0]["error"] and doc["algorithms"][1]["error"] is None


def test_experiment_bad_algorithm(tmp_path):
    assert main(["experiment", "--algorithms", "sgd", "--out-dir", str(tmp_path)]) == 2


def test_experiment_rerun_from_manifest(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["experiment", "--scale", "smoke", "--iterations", "1000", "--seed", "3",
                 "--algorithms", "fixed,for", "--out-dir", str(a)]) == 0
    assert main(["experiment", "--config", str(a / "manifest.json"), "--out-dir", str(b)]) == 0
    for name in ("result.json", "accuracy.csv", "dropout_rates.csv"):
        assert read(a / name) == read(b / name)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "bayesdrop", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("gen-data", "train", "eval", "experiment"):
        assert cmd in proc.stdout
