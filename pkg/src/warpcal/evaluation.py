"""Synthetic data generation, probabilistic scoring, and the study harness.

The study harness generates synthetic plume forecasts, produces station
observations under four data-generating processes (plain regression on
the forecast, spectrally smoothed covariates, and smoothed covariates
read through a translation or diffeomorphism warp), fits the model
variants, and scores held-out predictions with MSE, MAD, interval
coverage and CRPS.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError
from .inference import (ModelConfig, PosteriorSamples, basis_counts_for_stations,
                        fit, posterior_predict, summarize_predictions)
from .spatial import Grid, StationData, nearest_cell
from .spectral import GriddedField, SpectralLayers, build_layers
from .warp import AnalyticWarp, apply_warp, displacement as warp_displacement

GENERATIONS = ("slr", "smoothed", "translation", "diffeomorphism")


# ---------------------------------------------------------------------------
# Synthetic forecast fields


@dataclass(frozen=True)
class PlumeConfig:
    """Controls for the synthetic plume generator standing in for a real forecast.

    Fields are sums of compact anisotropic bumps that drift linearly over
    time on a mostly-zero background (log-concentration scale).  ``texture``
    modulates each bump with medium-frequency ripples so the field carries
    small-scale structure inside the plumes, like puffs in real smoke.
    """

    n_plumes: int = 4
    amplitude: tuple[float, float] = (6.0, 10.0)
    width: tuple[float, float] = (0.045, 0.105)
    elongation: tuple[float, float] = (1.2, 3.0)
    drift_scale: float = 0.02
    center_margin: float = 0.12
    texture: float = 1.0
    texture_waves: int = 4
    texture_freq: tuple[float, float] = (10.0, 36.0)


@dataclass(frozen=True)
class Scenario:
    """One simulation-study cell: data-generating process and station count."""

    generation: str
    n_stations: int
    l_gen: int = 10
    noise_sd: float = 1.0
    seed: int = 0
    intercept: float = 1.5
    slope: float = 0.25
    coef_mean: float = 0.25
    coef_var: float = 0.0625
    translation: tuple[float, float] = (0.16, 0.16)
    theta: tuple[float, float] = (0.1, 0.5)

    def __post_init__(self):
        if self.generation not in GENERATIONS:
            raise ConfigurationError(
                f"unknown generation {self.generation!r}; expected one of {GENERATIONS}")
        if self.n_stations < 1:
            raise ConfigurationError("n_stations must be positive")

    def true_warp(self) -> AnalyticWarp:
        if self.generation == "translation":
            return AnalyticWarp.translation(*self.translation)
        if self.generation == "diffeomorphism":
            return AnalyticWarp.diffeomorphism(*self.theta)
        return AnalyticWarp.identity()


def synthetic_plume(grid: Grid, n_times: int, seed: int,
                    config: PlumeConfig = PlumeConfig()) -> GriddedField:
    """Synthetic log-scale plume forecast with drifting bumps and zero background."""
    if n_times < 1:
        raise ConfigurationError("need at least one time step")
    rng = np.random.default_rng(seed)
    cx, cy = grid.centers_unit()
    gx, gy = np.meshgrid(cx, cy)  # (ny, nx)
    values = np.zeros((n_times, grid.ny, grid.nx))
    lo, hi = config.center_margin, 1.0 - config.center_margin
    for _ in range(config.n_plumes):
        center = rng.uniform(lo, hi, size=2)
        amp = rng.uniform(*config.amplitude)
        width = rng.uniform(*config.width)
        elong = rng.uniform(*config.elongation)
        angle = rng.uniform(0.0, np.pi)
        drift = rng.normal(0.0, config.drift_scale, size=2)
        freqs = rng.uniform(*config.texture_freq, size=config.texture_waves)
        wave_angles = rng.uniform(0.0, 2.0 * np.pi, size=config.texture_waves)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=config.texture_waves)
        ca, sa = np.cos(angle), np.sin(angle)
        sx, sy = width * elong, width / elong
        # texture is fixed in space (terrain-like) while the bump envelope
        # drifts over it
        ripple = np.zeros_like(gx)
        for f, wa, ph in zip(freqs, wave_angles, phases):
            ripple += np.cos(2.0 * np.pi * f * (np.cos(wa) * gx + np.sin(wa) * gy) + ph)
        modulation = 1.0 + config.texture * ripple / max(config.texture_waves, 1)
        for t in range(n_times):
            c = center + drift * t
            dx = gx - c[0]
            dy = gy - c[1]
            u = (ca * dx + sa * dy) / sx
            v = (-sa * dx + ca * dy) / sy
            q = u * u + v * v
            # compact support: bump hits zero exactly at 4 widths out
            bump = np.maximum(np.exp(-0.5 * q) - np.exp(-8.0), 0.0)
            values[t] += amp * bump * modulation
    return GriddedField(grid, values)


# ---------------------------------------------------------------------------
# Scenario data generation


def _draw_station_cells(rng, grid: Grid, n_stations: int):
    if n_stations > grid.n_cells:
        raise ConfigurationError(
            f"cannot place {n_stations} stations on {grid.n_cells} cells without replacement")
    cells = rng.choice(grid.n_cells, size=n_stations, replace=False)
    rows, cols = cells // grid.nx, cells % grid.nx
    return rows, cols


def _cell_values(layers: SpectralLayers, points) -> np.ndarray:
    """Layer values at the nearest cell of each point: (L, T, n_points)."""
    rows, cols = nearest_cell(layers.grid, points)
    return layers.layers[:, :, rows, cols]


def generate(scenario: Scenario, forecast: GriddedField):
    """Draw station locations and observations for one scenario replicate.

    Returns (stations, truth) where truth records the generating
    coefficients and warp for diagnostics.
    """
    rng = np.random.default_rng(scenario.seed)
    grid = forecast.grid
    rows, cols = _draw_station_cells(rng, grid, scenario.n_stations)
    locations = grid.cell_center(rows, cols)
    n_times = forecast.n_times
    truth = {
        "generation": scenario.generation,
        "intercept": scenario.intercept,
        "noise_sd": scenario.noise_sd,
        "seed": scenario.seed,
        "station_rows": rows.tolist(),
        "station_cols": cols.tolist(),
    }
    if scenario.generation == "slr":
        raw = forecast.values[:, rows, cols]  # (T, N)
        signal = scenario.intercept + scenario.slope * raw
        truth["slope"] = scenario.slope
    else:
        layers = build_layers(forecast, scenario.l_gen)
        coefs = np.sort(rng.normal(scenario.coef_mean, math.sqrt(scenario.coef_var),
                                   size=scenario.l_gen))[::-1]
        warped = apply_warp(scenario.true_warp(), locations)
        covs = _cell_values(layers, warped)  # (L, T, N)
        signal = scenario.intercept + np.einsum("l,ltn->tn", coefs, covs)
        truth["layer_coefs"] = coefs.tolist()
        truth["l_gen"] = scenario.l_gen
        if scenario.generation == "translation":
            truth["translation"] = list(scenario.translation)
        elif scenario.generation == "diffeomorphism":
            truth["theta"] = list(scenario.theta)
    values = signal + scenario.noise_sd * rng.standard_normal((n_times, scenario.n_stations))
    ids = tuple(f"s{i:03d}" for i in range(scenario.n_stations))
    missing = np.zeros_like(values, dtype=bool)
    return StationData(ids, locations, values, missing), truth


def train_test_times(n_times: int, train_frac: float):
    """Split time indices into a leading train block and trailing test block."""
    n_train = int(round(n_times * train_frac))
    if not 0 < n_train < n_times:
        raise ConfigurationError(
            f"train fraction {train_frac} leaves no usable split of {n_times} steps")
    return np.arange(n_train), np.arange(n_train, n_times)


# ---------------------------------------------------------------------------
# Scoring


def crps_sample(draws, y) -> np.ndarray:
    """Sample CRPS per observation via the sorted-form estimator.

    ``draws`` is (m, n) and y is (n,); implements E|X-y| - 0.5*E|X-X'|
    in O(m log m) per observation.
    """
    x = np.asarray(draws, dtype=float)
    obs = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
        obs = np.atleast_1d(obs)
    m = x.shape[0]
    if m < 2:
        raise ValueError("CRPS needs at least two draws")
    term1 = np.mean(np.abs(x - obs[None, :]), axis=0)
    xs = np.sort(x, axis=0)
    weights = 2.0 * np.arange(1, m + 1) - m - 1
    term2 = (weights @ xs) / (m * m)
    return term1 - term2


def crps_normal(mu, sigma, y) -> np.ndarray:
    """Closed-form CRPS of a Gaussian predictive distribution."""
    from scipy.stats import norm
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be nonnegative")
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, (y - mu) / np.where(sigma > 0, sigma, 1.0), 0.0)
    out = sigma * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - 1.0 / math.sqrt(math.pi))
    return np.where(sigma > 0, out, np.abs(y - mu))


@dataclass(frozen=True)
class ScoreReport:
    """Aggregate and per-observation forecast scores."""

    mse: float
    mad: float
    coverage: float
    crps: float
    n_scored: int
    squared_error: np.ndarray
    abs_error: np.ndarray
    covered: np.ndarray
    crps_values: np.ndarray

    def as_dict(self) -> dict:
        return {"mse": self.mse, "mad": self.mad, "coverage": self.coverage,
                "crps": self.crps, "n_scored": self.n_scored}


def score(pred_draws, y_true, level: float = 0.95, crps_draws=None) -> ScoreReport:
    """Score predictive draws against held-out values.

    Point scores use the draw mean; coverage uses the equal-tailed
    ``level`` interval of ``pred_draws``.  ``crps_draws`` optionally
    supplies a different draw array for the CRPS term (defaults to
    ``pred_draws``).  Observations with NaN truth are excluded.
    """
    draws = np.asarray(pred_draws, dtype=float)
    y = np.asarray(y_true, dtype=float)
    if draws.ndim != 2 or draws.shape[1] != y.shape[0]:
        raise ValueError("pred_draws must be (n_draws, n_obs) matching y_true")
    if draws.shape[0] < 2:
        raise ValueError("need at least two draws per observation")
    cd = draws if crps_draws is None else np.asarray(crps_draws, dtype=float)
    if cd.shape[1] != y.shape[0]:
        raise ValueError("crps_draws must cover the same observations")
    keep = np.isfinite(y)
    if not keep.any():
        raise ValueError("no finite held-out values to score")
    y = y[keep]
    draws = draws[:, keep]
    cd = cd[:, keep]
    point = draws.mean(axis=0)
    sq = (point - y) ** 2
    ab = np.abs(point - y)
    alpha = 1.0 - level
    lo = np.quantile(draws, alpha / 2.0, axis=0)
    hi = np.quantile(draws, 1.0 - alpha / 2.0, axis=0)
    covered = (y >= lo) & (y <= hi)
    crps_vals = crps_sample(cd, y)
    return ScoreReport(float(sq.mean()), float(ab.mean()), float(covered.mean()),
                       float(crps_vals.mean()), int(keep.sum()), sq, ab, covered, crps_vals)


def score_predictions(pred, y_true, level: float = 0.95) -> ScoreReport:
    """Score a PredictiveDraws object: intervals from noise-inclusive draws,
    CRPS from the latent-mean draws."""
    return score(pred.draws, y_true, level=level, crps_draws=pred.mean_draws)


# ---------------------------------------------------------------------------
# Warp recovery diagnostics


def active_region_points(field: GriddedField, times=None, frac: float = 0.1) -> np.ndarray:
    """Unit-square centers of cells whose time-mean value exceeds frac * max."""
    vals = field.values if times is None else field.values[np.asarray(times, dtype=int)]
    mean_field = vals.mean(axis=0)
    threshold = frac * mean_field.max()
    rows, cols = np.nonzero(mean_field > threshold)
    return field.grid.cell_center(rows, cols)


def mean_active_displacement(samples: PosteriorSamples, field: GriddedField,
                             times=None, frac: float = 0.1) -> np.ndarray:
    """Posterior-mean warp displacement averaged over the plume-active region."""
    points = active_region_points(field, times=times, frac=frac)
    disp = warp_displacement(samples.mean_warp_field(), points)
    return disp.mean(axis=0)


# ---------------------------------------------------------------------------
# Study harness


@dataclass(frozen=True)
class StudyConfig:
    """Scales and protocol shared by every cell of a simulation study."""

    grid: Grid = Grid(64, 48)
    n_times: int = 5
    train_frac: float = 0.6
    seed: int = 0
    n_iter: int = 20000
    n_burn: int = 10000
    n_jobs: int = 1
    plume: PlumeConfig = field(default_factory=PlumeConfig)
    model_overrides: dict = field(default_factory=dict)


def model_config_for(scenario: Scenario, study: StudyConfig, seed: int) -> ModelConfig:
    counts = basis_counts_for_stations(scenario.n_stations)
    base = dict(intercept_basis=counts, warp_basis=counts,
                n_iter=study.n_iter, n_burn=study.n_burn, seed=seed)
    base.update(study.model_overrides)
    return ModelConfig(**base)


def run_replicate(scenario: Scenario, variants, study: StudyConfig, replicate: int) -> list[dict]:
    """Generate one replicate dataset, fit every variant, and score it."""
    seeds = np.random.SeedSequence((study.seed, GENERATIONS.index(scenario.generation),
                                    scenario.n_stations, replicate))
    plume_seed, data_seed, fit_seed, pred_seed = [
        int(s.generate_state(1)[0]) for s in seeds.spawn(4)]
    rows = []

    def flagged(variant, exc):
        return {"scenario": scenario.generation, "n": scenario.n_stations,
                "variant": variant, "replicate": replicate,
                "mse": math.nan, "mad": math.nan, "coverage": math.nan,
                "crps": math.nan, "n_scored": 0, "seconds": math.nan,
                "error": f"{type(exc).__name__}: {exc}"}

    try:
        forecast = synthetic_plume(study.grid, study.n_times, plume_seed, study.plume)
        stations, _ = generate(replace(scenario, seed=data_seed), forecast)
        train_times, test_times = train_test_times(study.n_times, study.train_frac)
        train = stations.restrict_times(train_times)
        y_test = np.concatenate([
            np.where(stations.missing[t], np.nan, stations.values[t]) for t in test_times])
    except Exception as exc:  # dataset-level failure flags every variant
        return [flagged(v, exc) for v in variants]

    for variant in variants:
        try:
            started = time.perf_counter()
            config = model_config_for(scenario, study, fit_seed)
            samples = fit(forecast, train, config, variant)
            fit_seconds = time.perf_counter() - started
            layers = build_layers(forecast, samples.layer_coef.shape[1])
            pred = posterior_predict(samples, layers, stations, test_times, seed=pred_seed)
            report = score_predictions(pred, y_test)
            entry = {"scenario": scenario.generation, "n": scenario.n_stations,
                     "variant": variant, "replicate": replicate, "error": "",
                     "seconds": fit_seconds}
            entry.update(report.as_dict())
        except Exception as exc:  # flagged, never aborts the study
            entry = flagged(variant, exc)
        rows.append(entry)
    return rows


def _replicate_task(args):
    scenario, variants, study, replicate = args
    return run_replicate(scenario, variants, study, replicate)


def run_study(scenarios, variants, replicates: int, study: StudyConfig):
    """Fit every variant to every scenario replicate and collect scores.

    Returns per-cell rows; aggregate with :func:`aggregate_study`.
    Replicates run in parallel when study.n_jobs > 1; results are
    deterministic either way because every replicate derives its own seeds.
    """
    if replicates < 1:
        raise ConfigurationError("need at least one replicate")
    for v in variants:
        from .inference import variant_spec
        variant_spec(v)
    tasks = [(scenario, tuple(variants), study, rep)
             for scenario in scenarios for rep in range(replicates)]
    if study.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=study.n_jobs) as pool:
            chunks = list(pool.map(_replicate_task, tasks))
    else:
        chunks = [_replicate_task(t) for t in tasks]
    return [row for chunk in chunks for row in chunk]


def aggregate_study(rows) -> list[dict]:
    """Mean and standard error per (scenario, n, variant, metric).

    Order-insensitive: permuting replicates yields the identical table.
    """
    cells: dict[tuple, dict[str, list]] = {}
    for row in rows:
        key = (row["scenario"], row["n"], row["variant"])
        cells.setdefault(key, {"mse": [], "mad": [], "coverage": [], "crps": []})
        for metric in ("mse", "mad", "coverage", "crps"):
            if math.isfinite(row[metric]):
                cells[key][metric].append(row[metric])
    out = []
    for key in sorted(cells):
        scenario, n, variant = key
        for metric in ("mse", "mad", "coverage", "crps"):
            vals = np.sort(np.asarray(cells[key][metric]))
            n_ok = len(vals)
            mean = float(vals.mean()) if n_ok else math.nan
            se = float(vals.std(ddof=1) / math.sqrt(n_ok)) if n_ok > 1 else math.nan
            out.append({"scenario": scenario, "n": n, "variant": variant,
                        "metric": metric, "mean": mean, "se": se, "replicates": n_ok})
    return out
