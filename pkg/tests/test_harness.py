"""Tests for experiment orchestration."""

import dataclasses
import json
import logging

import numpy as np
import pytest

from conflict_ppo import harness
from conflict_ppo.checkpoint import load_checkpoint
from conflict_ppo.config import EnvConfig, RunConfig, TrainConfig, load_config
from conflict_ppo.exceptions import TrainingAborted, ValidationError
from conflict_ppo.harness import (
    Experiment,
    run_cell,
    sample_band_sets,
    synthetic_gradient_set,
)
from conflict_ppo.metrics import CosineLog, csv_columns, read_metrics


@pytest.fixture
def nan_harness(monkeypatch, nan_env_factory):
    """Make every harness run use diverging environments."""
    monkeypatch.setattr(harness, "default_env_factory", lambda env: nan_env_factory)


class TestRunCell:
    """Tests for a single training cell."""

    def test_artifacts(self, tiny_run, tmp_path):
        """Test a run writes its config, metrics, cosines and checkpoint."""
        cell = run_cell(tiny_run, tmp_path / "cell")
        out = tmp_path / "cell"

        assert cell.ok
        assert cell.updates == 2
        assert load_config(out / "config.yaml") == tiny_run
        assert list(read_metrics(out / "metrics.csv")) == csv_columns(["goal", "effort"])
        assert len(CosineLog(out / "cosines.jsonl").read()) == 2
        assert load_checkpoint(out / "checkpoint.json").document["extra"]["updates"] == 2

    def test_reruns_are_byte_identical(self, tiny_run, tmp_path):
        """Test equal configs write equal metrics files."""
        run_cell(tiny_run, tmp_path / "a")
        run_cell(tiny_run, tmp_path / "b")

        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (
            tmp_path / "b" / "metrics.csv"
        ).read_bytes()

    def test_default_config_writes_zero_timings(self, tmp_path):
        """Test a config that leaves record_timings unset reruns byte-identically."""
        config = TrainConfig(updates=2, num_envs=2, horizon=8, epochs=1, minibatches=2,
                             hidden_sizes=(8,))
        run = RunConfig(config, EnvConfig("pointmass-aligned", episode_length=8))
        run_cell(run, tmp_path / "a")
        run_cell(run, tmp_path / "b")

        first = (tmp_path / "a" / "metrics.csv").read_bytes()
        assert first == (tmp_path / "b" / "metrics.csv").read_bytes()
        metrics = read_metrics(tmp_path / "a" / "metrics.csv")
        for column in ("t_collect_s", "t_update_s", "t_project_s"):
            np.testing.assert_array_equal(metrics[column], 0.0)

    def test_rerun_replaces_cosine_log(self, tiny_run, tmp_path):
        """Test rerunning into a directory starts a fresh sidecar."""
        run_cell(tiny_run, tmp_path)
        run_cell(tiny_run, tmp_path)

        assert len(CosineLog(tmp_path / "cosines.jsonl").read()) == 2

    def test_abort_writes_checkpoint(self, tiny_run, tmp_path, nan_harness):
        """Test a numerical abort leaves the last-good checkpoint on disk."""
        with pytest.raises(TrainingAborted):
            run_cell(tiny_run, tmp_path)

        checkpoint = load_checkpoint(tmp_path / "checkpoint.json")
        assert checkpoint.document["extra"]["aborted"] is True


class TestExperiment:
    """Tests for the experiment runner."""

    def test_log_handler_lifecycle(self, tmp_path):
        """Test run.log is attached on entry and detached on exit."""
        package_logger = logging.getLogger("conflict_ppo")
        before = list(package_logger.handlers)

        with Experiment(tmp_path) as exp:
            assert exp._handler in package_logger.handlers
            logging.getLogger("conflict_ppo.harness").warning("hello run log")

        assert package_logger.handlers == before
        assert "hello run log" in (tmp_path / "run.log").read_text(encoding="utf-8")

    def test_invalid_workers(self, tmp_path):
        """Test at least one worker is required."""
        with pytest.raises(ValidationError, match="workers"):
            Experiment(tmp_path, workers=0)

    def test_train_into_subdir(self, tiny_run, tmp_path):
        """Test a named run lands in its subdirectory."""
        with Experiment(tmp_path) as exp:
            cell = exp.train(tiny_run, "single")

        assert cell.path == str(tmp_path / "single")
        assert (tmp_path / "single" / "metrics.csv").exists()

    def test_compare(self, tiny_run, tmp_path):
        """Test a two-algo comparison writes a summary with one row per algo."""
        with Experiment(tmp_path) as exp:
            rows = exp.compare(tiny_run, ["ppo", "gcr"], seeds=2, sweep=False)

        assert [r["algo"] for r in rows] == ["ppo", "gcr"]
        assert rows[0]["spc"] is None
        assert rows[1]["n"] == 2
        assert rows[1]["missing"] == 0
        assert rows[1]["win_rate"] is not None
        assert rows[0]["avg_conflict"] == 0.0
        assert (tmp_path / "gcr" / "seed_1" / "metrics.csv").exists()
        assert json.loads((tmp_path / "summary.json").read_text(encoding="utf-8"))[1]["algo"] == (
            "gcr"
        )
        header = (tmp_path / "summary.csv").read_text(encoding="utf-8").splitlines()[0]
        assert header.startswith("algo,n,mean_final")

    def test_compare_needs_two_algos(self, tiny_run, tmp_path):
        """Test a single-algo comparison is rejected."""
        with pytest.raises(ValidationError, match="two"):
            Experiment(tmp_path).compare(tiny_run, ["gcr"], seeds=1, sweep=False)

    def test_compare_records_missing_cells(self, tiny_run, tmp_path, nan_harness):
        """Test aborted cells are counted as missing instead of failing the run."""
        with Experiment(tmp_path) as exp:
            rows = exp.compare(tiny_run, ["ppo", "gcr"], seeds=2, sweep=False)

        assert [r["missing"] for r in rows] == [2, 2]
        assert rows[1]["spc"] is None
        assert (tmp_path / "gcr" / "seed_0" / "checkpoint.json").exists()

    def test_sweep(self, tiny_run, tmp_path):
        """Test the sweep scores each coefficient and picks one of them."""
        with Experiment(tmp_path) as exp:
            result = exp.sweep(tiny_run, points=2, seeds=1)

        assert result.coefficients == pytest.approx([1e-4, 0.03])
        assert result.best in result.coefficients
        assert len(result.scores) == 2
        metrics = read_metrics(tmp_path / "sweep" / "gcr" / "coef_1" / "seed_0" / "metrics.csv")
        assert len(metrics["update"]) == 1

    def test_suite(self, tiny_run, tmp_path):
        """Test the suite compares each config and writes its result."""
        runs = [("aligned", tiny_run), ("conflict", dataclasses.replace(
            tiny_run, env=EnvConfig("pointmass-conflict", episode_length=8)))]
        with Experiment(tmp_path) as exp:
            result = exp.suite(runs, ["ppo", "gcr"], seeds=1)

        assert [r["name"] for r in result.rows] == ["aligned", "conflict"]
        assert result.spearman_rho is None
        assert (tmp_path / "conflict" / "summary.json").exists()
        assert (tmp_path / "suite.json").exists()


class TestBands:
    """Tests for band-objective generation."""

    def test_sample_sets_use_distinct_quantities(self):
        """Test no set repeats a measured quantity."""
        for band_set in sample_band_sets(3, 20, seed=1):
            quantities = [band.quantity for band in band_set]
            assert len(band_set) == 3
            assert len(set(quantities)) == 3

    def test_sampling_is_seeded(self):
        """Test equal seeds give equal sets."""
        assert sample_band_sets(2, 5, seed=7) == sample_band_sets(2, 5, seed=7)

    @pytest.mark.parametrize("n", [0, 5])
    def test_objective_count(self, n):
        """Test the objective count is bounded by the quantities available."""
        with pytest.raises(ValidationError, match="n-objectives"):
            sample_band_sets(n, 1, seed=0)

    def test_written_configs_load(self, tmp_path):
        """Test every generated file is a valid styled config."""
        paths = Experiment(tmp_path).bands(RunConfig(), 2, 3, seed=0)

        assert [p.name for p in paths] == ["bands_00.yaml", "bands_01.yaml", "bands_02.yaml"]
        for path in paths:
            run = load_config(path)
            assert run.env.name == "pointmass-styled"
            assert len(run.env.bands) == 2

    def test_unstyled_env(self, tiny_run, tmp_path):
        """Test envs without band support are rejected."""
        with pytest.raises(ValidationError, match="band"):
            Experiment(tmp_path).bands(tiny_run, 2, 3, seed=0)


class TestOverhead:
    """Tests for the projection-overhead sweep."""

    def test_synthetic_labels_alternate(self, rng):
        """Test the first gradient is a task and labels alternate."""
        gs = synthetic_gradient_set(5, 8, 0.5, rng)

        assert gs.labels == ("task", "regulariser", "task", "regulariser", "task")
        assert gs.vectors.shape == (5, 8)

    def test_measurements(self, tmp_path):
        """Test one measurement per K, rate and trial, plus the fitted line."""
        with Experiment(tmp_path) as exp:
            report = exp.overhead(ks=(2, 4), rates=(0.0, 0.5), dim=32, trials=3)

        assert len(report.measurements) == 12
        assert {m["k"] for m in report.measurements} == {2.0, 4.0}
        assert all(m["seconds"] >= 0.0 for m in report.measurements)
        assert np.isfinite(report.fit.slope)
        assert (tmp_path / "overhead.csv").exists()
        assert set(json.loads((tmp_path / "overhead.json").read_text(encoding="utf-8"))) == {
            "slope",
            "intercept",
            "r_squared",
        }
