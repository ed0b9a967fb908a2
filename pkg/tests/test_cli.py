"""Command-line verbs and their exit codes"""

import json
import logging

import pytest

from app import worker as worker_module
from app.exceptions import ConfigurationError
from app.logging_config import _OWNED
from app.main import EXIT_CONFIG, EXIT_FAILURES, EXIT_OK, load_spec, main
from app.models.job_queue_model import JobType

SWEEP_FLAGS = ["--executor", "thread", "--workers", "2", "--trials", "1", "--lambdas", "0,0.9"]


@pytest.fixture(autouse=True)
def _in_tmp(tmp_path, monkeypatch):
    """Run every CLI call from tmp_path and drop the log handlers it installs"""
    monkeypatch.chdir(tmp_path)
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, _OWNED, False):
            root.removeHandler(handler)
            handler.close()


@pytest.fixture
def config_file(small_spec, tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(small_spec.model_dump(mode="json", exclude={"output_dir"})), encoding="utf-8")
    return str(path)


class TestLoadSpec:
    def test_defaults_without_file(self):
        spec = load_spec(None)
        assert spec.trials == 10
        assert spec.sim.K == 500

    def test_dotted_overrides(self, config_file):
        spec = load_spec(config_file, {"sim.r": 0.25, "trials": 3, "train.epochs": None})
        assert spec.sim.r == 0.25
        assert spec.trials == 3
        assert spec.train.epochs == 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_spec(str(tmp_path / "nope.json"))

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"sim": {"gamma": 1}}), encoding="utf-8")
        with pytest.raises(ConfigurationError):
            load_spec(str(path))


class TestSimulateAndTrain:
    def test_simulate_then_train(self, config_file, tmp_path):
        assert main(["simulate", "--config", config_file, "--output-dir", "sim"]) == EXIT_OK
        for name in ("fl.csv", "heldout.csv", "simulation_summary.json", "run.log", "resolved_config.json"):
            assert (tmp_path / "sim" / name).exists()
        assert (tmp_path / "logs" / "app.log").exists()

        code = main([
            "train", "--config", config_file, "--data", "sim/fl.csv", "--heldout", "sim/heldout.csv",
            "--lam", "0.9", "--output-dir", "model",
        ])
        assert code == EXIT_OK
        metrics = json.loads((tmp_path / "model" / "metrics.json").read_text(encoding="utf-8"))
        assert metrics["record"]["lam"] == 0.9
        assert metrics["record"]["checkpoint"] == "model.json"
        assert metrics["rus"]["tag"] == "RUS"
        assert metrics["record"]["bypass_diff"] is not None
        assert len(metrics["training"]["epochs"]) == 3
        assert (tmp_path / "model" / "model.json").exists()

    def test_train_on_malformed_csv(self, config_file, tmp_path):
        (tmp_path / "bad.csv").write_text("f0,label,position,b\n0.5,7,1,0.4\n", encoding="utf-8")
        assert main(["train", "--config", config_file, "--data", "bad.csv", "--output-dir", "m"]) == EXIT_CONFIG

    def test_invalid_config(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"trials": 0}), encoding="utf-8")
        assert main(["simulate", "--config", str(path)]) == EXIT_CONFIG

    def test_day_larger_than_reservoir(self, tmp_path):
        path = tmp_path / "tiny.json"
        sim = {"K": 20, "reservoir_size": 10, "heldout_size": 10, "candidate_set_size": 5}
        path.write_text(json.dumps({"sim": sim}), encoding="utf-8")
        assert main(["simulate", "--config", str(path), "--output-dir", "sim"]) == EXIT_CONFIG
        assert not (tmp_path / "sim" / "fl.csv").exists()


class TestSweepVerbs:
    def test_sweep_and_report(self, config_file, tmp_path):
        code = main(["sweep", "--config", config_file, "--output-dir", "sweep", "--format", "json", *SWEEP_FLAGS])
        assert code == EXIT_OK
        assert (tmp_path / "sweep" / "report.json").exists()
        assert not (tmp_path / "sweep" / "failures.json").exists()

        assert main(["report", "--input", "sweep", "--output-dir", "again", "--from-runs"]) == EXIT_OK
        for name in ("gains.csv", "panel_fl_auc.csv", "runs.csv", "sweep_result.json"):
            assert (tmp_path / "again" / name).exists()

    def test_failures_exit_one(self, config_file, tmp_path, monkeypatch):
        def failing(**payload):
            raise RuntimeError("worker died")

        monkeypatch.setitem(worker_module._HANDLERS, JobType.TRAIN_CELL, failing)
        code = main(["sweep", "--config", config_file, "--output-dir", "sweep", *SWEEP_FLAGS])
        assert code == EXIT_FAILURES
        manifest = json.loads((tmp_path / "sweep" / "failures.json").read_text(encoding="utf-8"))
        assert len(manifest["cells"]) == 4

    def test_user_bias(self, config_file, tmp_path):
        code = main(["user-bias", "--config", config_file, "--output-dir", "ub", *SWEEP_FLAGS])
        assert code == EXIT_OK
        result = json.loads((tmp_path / "ub" / "sweep_result.json").read_text(encoding="utf-8"))
        assert result["spec"]["sim"]["r"] == 0.25

    def test_user_bias_rejects_bad_r(self, config_file):
        assert main(["user-bias", "--config", config_file, "--r", "1.5", *SWEEP_FLAGS]) == EXIT_CONFIG

    def test_bad_lambda_list(self, config_file):
        code = main(["sweep", "--config", config_file, "--executor", "thread", "--lambdas", "0,abc"])
        assert code == EXIT_CONFIG

    def test_lambda_out_of_range(self, config_file):
        code = main(["sweep", "--config", config_file, "--executor", "thread", "--lambdas", "0,1.5"])
        assert code == EXIT_CONFIG

    def test_bad_worker_count(self, config_file):
        code = main(["sweep", "--config", config_file, "--executor", "thread", "--workers", "0"])
        assert code == EXIT_CONFIG

    def test_report_without_sweep(self, tmp_path):
        assert main(["report", "--input", str(tmp_path / "missing")]) == EXIT_CONFIG
