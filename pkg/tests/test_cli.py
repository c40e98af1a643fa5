"""End-to-end command-line workflows on the small linear problem."""

import csv
import json

import pytest

from deceptron import cli


@pytest.fixture(scope="module")
def trained_models(tmp_path_factory):
    out = tmp_path_factory.mktemp("models")
    rc = cli.main(["train", "--problem", "linear", "--seed", "0",
                   "--out", str(out), "--n-train", "192", "--n-val", "48",
                   "--n-test", "16"])
    assert rc == 0
    return out


def test_train_artifacts(trained_models):
    for name in ("model_plus.json", "model_minus.json", "history.csv",
                 "train_meta.json"):
        assert (trained_models / name).exists()
    meta = json.loads((trained_models / "train_meta.json").read_text())
    assert meta["problem"] == "linear"
    assert meta["train_time_s"] > 0


def test_solve_writes_trace_and_summary(trained_models, tmp_path):
    prefix = tmp_path / "run"
    rc = cli.main(["solve", "--problem", "linear",
                   "--model", str(trained_models / "model_plus.json"),
                   "--instance-seed", "3", "--method", "dipg",
                   "--x0", "zeros", "--out", str(prefix)])
    assert rc == 0
    with open(f"{prefix}_trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and rows[0]["t"] == "0"
    assert set(cli.TRACE_COLUMNS) == set(rows[0])
    summary = json.loads(open(f"{prefix}_summary.json").read())
    assert summary["method"] == "dipg"
    assert summary["terminated_by"] in ("tolerance", "max_iters",
                                        "backtrack_exhausted")


def test_solve_baseline_method(trained_models, tmp_path):
    rc = cli.main(["solve", "--problem", "linear",
                   "--model", str(trained_models / "model_plus.json"),
                   "--instance-seed", "3", "--method", "gn",
                   "--x0", "zeros"])
    assert rc == 0


def test_bench_emits_artifact_set(trained_models, tmp_path):
    out = tmp_path / "bench"
    rc = cli.main(["bench", "--problem", "linear",
                   "--models", str(trained_models),
                   "--methods", "dipg+jcp,dipg-jcp,gn,lm",
                   "--instances", "4", "--seed", "11", "--out", str(out)])
    assert rc == 0
    for name in ("records.csv", "profiles_time.csv", "profiles_iters.csv",
                 "data_profile.csv", "reliability.csv", "run_manifest.json"):
        assert (out / name).exists(), name
    with open(out / "records.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 16  # 4 methods x 4 instances
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["seed"] == 11
    assert manifest["model_hash_plus"]


def test_bench_matched_instance_seeds(trained_models, tmp_path):
    out = tmp_path / "bench2"
    cli.main(["bench", "--problem", "linear", "--models", str(trained_models),
              "--methods", "dipg+jcp,gn", "--instances", "3",
              "--seed", "5", "--out", str(out)])
    with open(out / "records.csv") as fh:
        rows = list(csv.DictReader(fh))
    seeds = {m: sorted(r["instance_seed"] for r in rows if r["method"] == m)
             for m in ("dipg+jcp", "gn")}
    assert seeds["dipg+jcp"] == seeds["gn"]


def test_verify_passes(tmp_path, capsys):
    report = tmp_path / "verify.json"
    rc = cli.main(["verify", "--suite", "all", "--trials", "20",
                   "--seed", "0", "--out", str(report)])
    assert rc == 0
    payload = json.loads(report.read_text())
    assert payload["passed"]
    assert len(payload["reports"]) == 5


def test_verify_single_suite():
    assert cli.main(["verify", "--suite", "trace_probe", "--trials", "10"]) == 0


def test_make_dataset(tmp_path):
    out = tmp_path / "ds"
    rc = cli.main(["make-dataset", "--problem", "linear", "--seed", "2",
                   "--out", str(out), "--n-train", "8", "--n-val", "2",
                   "--n-test", "2"])
    assert rc == 0
    assert (out / "meta.json").exists()
    assert (out / "train_x.npy").exists()
