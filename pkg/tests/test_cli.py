"""CLI commands, file formats, round trips, and exit codes."""

import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from warpcal import io
from warpcal.cli import main
from warpcal.config import load_config
from warpcal.errors import ConfigurationError
from warpcal.inference import ModelConfig
from warpcal.spatial import Grid, StationData
from warpcal.spectral import GriddedField


BASE_CONFIG = {
    "seed": 42,
    "grid": {"nx": 16, "ny": 12, "bbox": [0.0, 64.0, 0.0, 48.0]},
    "simulate": {
        "n_times": 4,
        "scenario": {"generation": "translation", "n_stations": 8},
    },
    "fit": {
        "variant": "full",
        "train_frac": 0.75,
        "model": {"n_layers": 3, "n_iter": 80, "n_burn": 40,
                  "intercept_basis": [4, 4], "warp_basis": [4, 4]},
    },
    "predict": {"save_draws": True},
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A run directory with simulate/fit/predict/evaluate already executed."""
    root = tmp_path_factory.mktemp("cli")
    config = dict(BASE_CONFIG, out_dir=str(root / "run"))
    cfg_path = root / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(config))
    for command in ("simulate", "fit", "predict", "evaluate"):
        assert main([command, "--config", str(cfg_path)]) == 0
    return root


def test_simulate_is_deterministic(workdir, tmp_path):
    cfg = workdir / "config.yaml"
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    for name in ("forecast.csv", "forecast.meta.json", "stations.csv", "truth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_truth_records_translation(workdir):
    truth = json.loads((workdir / "run" / "truth.json").read_text())
    assert truth["translation"] == [0.16, 0.16]
    assert truth["generation"] == "translation"


def test_station_cells_distinct(workdir):
    truth = json.loads((workdir / "run" / "truth.json").read_text())
    cells = set(zip(truth["station_rows"], truth["station_cols"]))
    assert len(cells) == 8


def test_fit_rerun_byte_identical(workdir, tmp_path):
    cfg = workdir / "config.yaml"
    out = tmp_path / "redo"
    for name in ("forecast.csv", "forecast.meta.json", "stations.csv", "truth.json"):
        out.mkdir(exist_ok=True)
        (out / name).write_bytes((workdir / "run" / name).read_bytes())
    assert main(["fit", "--config", str(cfg), "--out", str(out)]) == 0
    assert ((out / "samples_full.csv").read_bytes()
            == (workdir / "run" / "samples_full.csv").read_bytes())
    assert ((out / "acceptance_full.json").read_bytes()
            == (workdir / "run" / "acceptance_full.json").read_bytes())


def test_protocol_defaults_twenty_thousand(tmp_path):
    # an empty model section keeps the reference protocol
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"out_dir": str(tmp_path)}))
    config = load_config(cfg)
    assert ModelConfig().n_iter == 20000
    assert ModelConfig().n_burn == 10000
    assert config.fit.model == {}
    assert config.report.replicates == 30


def test_prediction_summary_covers_test_window(workdir):
    lines = (workdir / "run" / "predictions_full.csv").read_text().strip().splitlines()
    assert lines[0] == "station_id,time,mean,sd,skewness,kurtosis,lo,hi"
    assert len(lines) - 1 == 8  # 8 stations x 1 held-out time
    assert all(line.split(",")[1] == "3" for line in lines[1:])


def test_scores_written(workdir):
    scores = json.loads((workdir / "run" / "scores_full.json").read_text())
    for key in ("mse", "mad", "coverage", "crps", "n_scored", "level"):
        assert key in scores
    assert scores["n_scored"] == 8


def test_evaluate_excludes_missing_truth(workdir, tmp_path, capsys):
    out = tmp_path / "missing"
    out.mkdir()
    for name in ("forecast.csv", "forecast.meta.json", "stations.csv",
                 "mean_draws_full.csv", "pred_draws_full.csv"):
        (out / name).write_bytes((workdir / "run" / name).read_bytes())
    lines = (out / "stations.csv").read_text().splitlines()
    # blank the value of the first station at the held-out time 3
    for i, line in enumerate(lines):
        parts = line.split(",")
        if parts[0] == "s000" and parts[3] == "3":
            lines[i] = ",".join(parts[:4]) + ","
    (out / "stations.csv").write_text("\n".join(lines) + "\n")
    cfg = workdir / "config.yaml"
    assert main(["evaluate", "--config", str(cfg), "--out", str(out)]) == 0
    assert "excluded 1 observations" in capsys.readouterr().out
    scores = json.loads((out / "scores_full.json").read_text())
    assert scores["n_scored"] == 7


def test_perfect_predictions_score_zero(workdir, tmp_path):
    out = tmp_path / "perfect"
    out.mkdir()
    for name in ("forecast.csv", "forecast.meta.json", "stations.csv"):
        (out / name).write_bytes((workdir / "run" / name).read_bytes())
    forecast = io.read_grid_csv(out / "forecast.csv")
    stations = io.read_stations_csv(out / "stations.csv", forecast.grid)
    names = [f"{sid}@3" for sid in stations.ids]
    # four identical draws keep the draw mean exact in floating point
    truth = np.tile(stations.values[3], (4, 1))
    io.write_draws_csv(out / "pred_draws_full.csv", truth, names)
    io.write_draws_csv(out / "mean_draws_full.csv", truth, names)
    assert main(["evaluate", "--config", str(workdir / "config.yaml"),
                 "--out", str(out)]) == 0
    scores = json.loads((out / "scores_full.json").read_text())
    assert scores["mse"] == 0.0 and scores["crps"] == 0.0 and scores["coverage"] == 1.0


class TestRoundTrips:
    def test_grid_file(self, tmp_path):
        rng = np.random.default_rng(0)
        field = GriddedField(Grid(6, 5, (0, 3, 0, 2)), rng.normal(size=(2, 5, 6)))
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        io.write_grid_csv(a, field)
        io.write_grid_csv(b, io.read_grid_csv(a))
        assert a.read_bytes() == b.read_bytes()
        assert io.meta_path(a).read_bytes() == io.meta_path(b).read_bytes()

    def test_stations_file_with_missing(self, tmp_path):
        grid = Grid(6, 5, (0, 3, 0, 2))
        values = np.array([[1.5, 0.0], [0.25, -2.0]])
        missing = np.array([[False, True], [False, False]])
        stations = StationData(("a", "b"), np.array([[0.25, 0.5], [0.75, 0.1]]),
                               values, missing)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        io.write_stations_csv(a, stations, grid)
        back = io.read_stations_csv(a, grid)
        assert back.missing[0, 1] and not back.missing[0, 0]
        io.write_stations_csv(b, back, grid)
        assert a.read_bytes() == b.read_bytes()

    def test_samples_file(self, workdir, tmp_path):
        src = workdir / "run" / "samples_full.csv"
        samples = io.read_samples_csv(src)
        assert samples.variant == "full"
        dst = tmp_path / "again.csv"
        io.write_samples_csv(dst, samples)
        assert src.read_bytes() == dst.read_bytes()

    def test_draws_file(self, tmp_path):
        rng = np.random.default_rng(1)
        draws = rng.normal(size=(7, 3))
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        io.write_draws_csv(a, draws, ["x@0", "y@0", "z@1"])
        names, back = io.read_draws_csv(a)
        io.write_draws_csv(b, back, names)
        assert a.read_bytes() == b.read_bytes()


class TestValidationAndExitCodes:
    def test_unknown_top_level_key_rejected(self, tmp_path):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text(yaml.safe_dump({"sede": 1}))
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 2

    def test_unknown_nested_key_rejected(self, tmp_path):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text(yaml.safe_dump({"fit": {"variannt": "full"}}))
        with pytest.raises(ConfigurationError):
            load_config(cfg)

    def test_unknown_model_key_rejected(self, tmp_path):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text(yaml.safe_dump({"fit": {"model": {"n_itter": 5}}}))
        with pytest.raises(ConfigurationError):
            load_config(cfg)

    def test_missing_dataset_is_data_error(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text(yaml.safe_dump(dict(BASE_CONFIG, out_dir=str(tmp_path / "none"))))
        assert main(["fit", "--config", str(cfg)]) == 3

    def test_missing_config_is_data_error(self, tmp_path):
        assert main(["fit", "--config", str(tmp_path / "nope.yaml")]) == 3

    def test_empty_test_range_is_config_error(self, workdir, tmp_path):
        config = dict(BASE_CONFIG, out_dir=str(workdir / "run"))
        config["fit"] = dict(config["fit"], train_frac=0.99)
        cfg = tmp_path / "c.yaml"
        cfg.write_text(yaml.safe_dump(config))
        assert main(["predict", "--config", str(cfg)]) == 2

    def test_seed_override_changes_output(self, workdir, tmp_path):
        cfg = workdir / "config.yaml"
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "s"),
                     "--seed", "7"]) == 0
        assert ((tmp_path / "s" / "forecast.csv").read_bytes()
                != (workdir / "run" / "forecast.csv").read_bytes())

    def test_variant_override(self, workdir, tmp_path):
        out = tmp_path / "slr"
        out.mkdir()
        for name in ("forecast.csv", "forecast.meta.json", "stations.csv"):
            (out / name).write_bytes((workdir / "run" / name).read_bytes())
        cfg = workdir / "config.yaml"
        assert main(["fit", "--config", str(cfg), "--out", str(out),
                     "--variant", "slr"]) == 0
        header = (out / "samples_slr.csv").read_text().splitlines()[0]
        assert header == "b0,beta_1,sigma2,rhox"


def test_report_runs_tiny_study(tmp_path):
    config = {
        "seed": 3,
        "out_dir": str(tmp_path / "study"),
        "grid": {"nx": 12, "ny": 10},
        "report": {
            "generations": ["slr"], "station_counts": [25], "variants": ["slr", "smooth"],
            "replicates": 2, "n_times": 3, "train_frac": 0.67,
            "n_iter": 40, "n_burn": 20,
            "model": {"intercept_basis": [4, 4], "warp_basis": [4, 4], "n_layers": 2},
        },
    }
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(config))
    assert main(["report", "--config", str(cfg)]) == 0
    summary = (tmp_path / "study" / "study_summary.csv").read_text().splitlines()
    assert summary[0] == "scenario,n,variant,metric,mean,se,replicates"
    # 1 scenario x 2 variants x 4 metrics
    assert len(summary) - 1 == 8
    cells = (tmp_path / "study" / "study_cells.csv").read_text().splitlines()
    assert len(cells) - 1 == 4
    assert (tmp_path / "study" / "study_summary.txt").exists()
