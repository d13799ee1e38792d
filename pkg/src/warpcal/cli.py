"""Command-line interface: simulate, fit, predict, evaluate, report.

Every command reads one YAML config (see ``config.py``) plus optional
``--seed``, ``--out`` and ``--variant`` overrides, and writes its outputs
into the run directory.  Exit codes: 0 success, 2 configuration error,
3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig, load_config, model_config_from_dict
from .errors import ConfigurationError, DataError, NumericalError
from .evaluation import (aggregate_study, generate, run_study, score, Scenario,
                         StudyConfig, synthetic_plume, train_test_times)
from .inference import fit, posterior_predict, variant_spec
from .spectral import build_layers


def _derive_seeds(seed: int, label: str, n: int) -> list[int]:
    labels = {"simulate": 0, "fit": 1, "predict": 2, "report": 3}
    root = np.random.SeedSequence((seed, labels[label]))
    return [int(s.generate_state(1)[0]) for s in root.spawn(n)]


def _load(args) -> tuple[RunConfig, Path]:
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    out_dir = Path(args.out) if args.out else Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return config, out_dir


def _variant(args, config: RunConfig) -> str:
    name = args.variant or config.fit.variant
    variant_spec(name)
    return name


def cmd_simulate(args) -> int:
    config, out_dir = _load(args)
    sim = config.simulate
    plume_seed, data_seed = _derive_seeds(config.seed, "simulate", 2)
    forecast = synthetic_plume(config.grid, sim.n_times, plume_seed, sim.plume)
    scenario = replace(sim.scenario, seed=data_seed)
    stations, truth = generate(scenario, forecast)
    io.write_grid_csv(out_dir / "forecast.csv", forecast)
    io.write_stations_csv(out_dir / "stations.csv", stations, config.grid)
    io.write_truth_json(out_dir / "truth.json", truth)
    print(f"simulate: wrote forecast.csv, stations.csv, truth.json in {out_dir}")
    return 0


def cmd_fit(args) -> int:
    config, out_dir = _load(args)
    variant = _variant(args, config)
    forecast = io.read_grid_csv(out_dir / "forecast.csv")
    stations = io.read_stations_csv(out_dir / "stations.csv", forecast.grid)
    train_times, _ = train_test_times(forecast.n_times, config.fit.train_frac)
    train = stations.restrict_times(train_times)
    (fit_seed,) = _derive_seeds(config.seed, "fit", 1)
    model = model_config_from_dict(dict(config.fit.model), stations.n_stations, fit_seed)
    samples = fit(forecast, train, model, variant)
    io.write_samples_csv(out_dir / f"samples_{variant}.csv", samples)
    io.write_acceptance_json(out_dir / f"acceptance_{variant}.json", samples)
    if variant_spec(variant).warp:
        io.write_warp_summary_csv(out_dir / f"warp_summary_{variant}.csv",
                                  samples, stations, forecast.grid)
        if config.fit.save_warp_draws:
            io.write_warp_draws_csv(out_dir / f"warp_draws_{variant}.csv", samples, stations)
    rates = ", ".join(f"{k}={v:.2f}" for k, v in sorted(samples.acceptance.items()))
    print(f"fit[{variant}]: {samples.n_kept} kept draws; acceptance {rates or 'n/a'}")
    return 0


def cmd_predict(args) -> int:
    config, out_dir = _load(args)
    variant = _variant(args, config)
    forecast = io.read_grid_csv(out_dir / "forecast.csv")
    stations = io.read_stations_csv(out_dir / "stations.csv", forecast.grid)
    samples = io.read_samples_csv(out_dir / f"samples_{variant}.csv")
    _, test_times = train_test_times(forecast.n_times, config.fit.train_frac)
    if len(test_times) == 0:
        raise DataError("empty test range: nothing to predict")
    layers = build_layers(forecast, samples.layer_coef.shape[1])
    (pred_seed,) = _derive_seeds(config.seed, "predict", 1)
    pred = posterior_predict(samples, layers, stations, test_times, seed=pred_seed)
    io.write_prediction_summary_csv(out_dir / f"predictions_{variant}.csv", pred,
                                    stations, level=config.predict.level)
    if config.predict.save_draws:
        io.write_prediction_draws(out_dir, variant, pred, stations)
    print(f"predict[{variant}]: {pred.draws.shape[1]} observations at times "
          f"{test_times.tolist()}")
    return 0


def cmd_evaluate(args) -> int:
    config, out_dir = _load(args)
    variant = _variant(args, config)
    forecast = io.read_grid_csv(out_dir / "forecast.csv")
    stations = io.read_stations_csv(out_dir / "stations.csv", forecast.grid)
    names, pred_draws = io.read_draws_csv(out_dir / f"pred_draws_{variant}.csv")
    names_mu, mean_draws = io.read_draws_csv(out_dir / f"mean_draws_{variant}.csv")
    if names != names_mu:
        raise DataError("mean and predictive draw files cover different observations")
    sid_index = {sid: i for i, sid in enumerate(stations.ids)}
    y = np.empty(len(names))
    for i, name in enumerate(names):
        sid, _, t = name.rpartition("@")
        try:
            s, t = sid_index[sid], int(t)
        except (KeyError, ValueError) as exc:
            raise DataError(f"prediction column {name!r} does not match stations") from exc
        y[i] = np.nan if stations.missing[t, s] else stations.values[t, s]
    n_missing = int(np.isnan(y).sum())
    if n_missing:
        print(f"evaluate[{variant}]: excluded {n_missing} observations with missing truth")
    report = score(pred_draws, y, level=config.evaluate.level, crps_draws=mean_draws)
    io.write_scores(out_dir / f"scores_{variant}.json", out_dir / f"scores_{variant}.txt",
                    report, config.evaluate.level)
    print(f"evaluate[{variant}]: mse={report.mse:.4f} mad={report.mad:.4f} "
          f"coverage={report.coverage:.3f} crps={report.crps:.4f}")
    return 0


def cmd_report(args) -> int:
    config, out_dir = _load(args)
    rep = config.report
    scenarios = [Scenario(gen, n) for gen in rep.generations for n in rep.station_counts]
    study = config.study_config()
    rows = run_study(scenarios, list(rep.variants), rep.replicates, study)
    table = aggregate_study(rows)
    io.write_study_cells_csv(out_dir / "study_cells.csv", rows)
    io.write_study_summary_csv(out_dir / "study_summary.csv", table)
    (out_dir / "study_summary.txt").write_text(io.format_study_text(table, rep.variants))
    failed = sum(1 for r in rows if r.get("error"))
    print(f"report: {len(rows)} fits ({failed} flagged) -> study_summary.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="warpcal",
        description="Calibrate gridded forecasts against point observations "
                    "with a warped, spectrally smoothed downscaling model.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, handler, doc in (
            ("simulate", cmd_simulate, "generate a synthetic forecast and observations"),
            ("fit", cmd_fit, "run the MCMC fit on the training window"),
            ("predict", cmd_predict, "posterior predictions for the held-out window"),
            ("evaluate", cmd_evaluate, "score predictions against held-out truth"),
            ("report", cmd_report, "run the full simulation study")):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", required=True, help="path to the YAML run config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--variant", default=None, choices=["slr", "smooth", "warp", "full"],
                       help="override the fit variant")
        p.set_defaults(handler=handler)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
