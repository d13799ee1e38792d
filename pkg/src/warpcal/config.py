"""Run configuration: YAML loading, strict validation, dataclass sections.

Every section rejects unknown keys so typos fail fast, and defaults match
the reference protocol (20,000 iterations with 10,000 burn-in, 15 layers,
basis counts keyed on the station count).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigurationError, DataError
from .evaluation import GENERATIONS, PlumeConfig, Scenario, StudyConfig
from .inference import ModelConfig, VARIANTS, basis_counts_for_stations
from .priors import HyperPriors
from .spatial import Grid


def _check_keys(data: dict, allowed, context: str) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigurationError(f"unknown config key(s) {unknown} in '{context}'")


def _build(cls, data: dict, context: str, converters: dict | None = None):
    """Instantiate a dataclass from a dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigurationError(f"section '{context}' must be a mapping")
    names = [f.name for f in fields(cls)]
    _check_keys(data, names, context)
    kwargs = {}
    for key, value in data.items():
        conv = (converters or {}).get(key)
        kwargs[key] = conv(value) if conv else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"bad value in '{context}': {exc}") from exc


def _pair(value, context: str) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigurationError(f"'{context}' must be a pair")
    return tuple(value)


def grid_from_dict(data: dict) -> Grid:
    _check_keys(data, ("nx", "ny", "bbox"), "grid")
    bbox = tuple(data.get("bbox", (0.0, 1.0, 0.0, 1.0)))
    if len(bbox) != 4:
        raise ConfigurationError("grid.bbox must be [xmin, xmax, ymin, ymax]")
    return Grid(int(data.get("nx", 64)), int(data.get("ny", 48)), bbox)


def scenario_from_dict(data: dict) -> Scenario:
    return _build(Scenario, data, "scenario", converters={
        "translation": lambda v: _pair(v, "scenario.translation"),
        "theta": lambda v: _pair(v, "scenario.theta"),
    })


def plume_from_dict(data: dict) -> PlumeConfig:
    return _build(PlumeConfig, data, "plume", converters={
        "amplitude": lambda v: _pair(v, "plume.amplitude"),
        "width": lambda v: _pair(v, "plume.width"),
        "elongation": lambda v: _pair(v, "plume.elongation"),
    })


_MODEL_KEYS = ("intercept_basis", "warp_basis", "n_layers", "n_iter", "n_burn",
               "warp_scale", "rho_scale", "warp_var_scale", "warp_sites_per_block",
               "adapt", "adapt_target", "hyper")


def model_config_from_dict(data: dict, n_stations: int, seed: int) -> ModelConfig:
    """Build a ModelConfig; missing basis counts default per the station count."""
    _check_keys(data, _MODEL_KEYS, "fit.model")
    kwargs = dict(data)
    hyper = kwargs.pop("hyper", None)
    if hyper is not None:
        kwargs["hyper"] = _build(HyperPriors, hyper, "fit.model.hyper")
    auto = basis_counts_for_stations(n_stations)
    for key in ("intercept_basis", "warp_basis"):
        value = kwargs.get(key)
        kwargs[key] = auto if value is None else _pair(value, f"fit.model.{key}")
    config = ModelConfig(seed=seed, **kwargs)
    config.validate()
    return config


@dataclass(frozen=True)
class SimulateSection:
    n_times: int = 5
    scenario: Scenario = field(default_factory=lambda: Scenario("translation", 50))
    plume: PlumeConfig = field(default_factory=PlumeConfig)


@dataclass(frozen=True)
class FitSection:
    variant: str = "full"
    train_frac: float = 0.6
    save_warp_draws: bool = False
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"fit.variant must be one of {VARIANTS}")
        if not 0.0 < self.train_frac < 1.0:
            raise ConfigurationError("fit.train_frac must lie in (0, 1)")


@dataclass(frozen=True)
class PredictSection:
    save_draws: bool = True
    level: float = 0.95


@dataclass(frozen=True)
class EvaluateSection:
    level: float = 0.95


@dataclass(frozen=True)
class ReportSection:
    generations: tuple = GENERATIONS
    station_counts: tuple = (25, 50, 100)
    variants: tuple = VARIANTS
    replicates: int = 30
    n_times: int = 5
    train_frac: float = 0.6
    n_iter: int = 20000
    n_burn: int = 10000
    n_jobs: int = 1
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        for gen in self.generations:
            if gen not in GENERATIONS:
                raise ConfigurationError(f"report.generations entry {gen!r} not in {GENERATIONS}")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigurationError(f"report.variants entry {v!r} not in {VARIANTS}")


@dataclass(frozen=True)
class RunConfig:
    """Top-level configuration shared by all CLI commands."""

    seed: int = 0
    out_dir: str = "out"
    grid: Grid = field(default_factory=lambda: Grid(64, 48))
    simulate: SimulateSection = field(default_factory=SimulateSection)
    fit: FitSection = field(default_factory=FitSection)
    predict: PredictSection = field(default_factory=PredictSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    report: ReportSection = field(default_factory=ReportSection)

    def study_config(self, plume: PlumeConfig | None = None) -> StudyConfig:
        rep = self.report
        overrides = dict(rep.model)
        _check_keys(overrides, [k for k in _MODEL_KEYS if k != "hyper"], "report.model")
        return StudyConfig(grid=self.grid, n_times=rep.n_times, train_frac=rep.train_frac,
                           seed=self.seed, n_iter=rep.n_iter, n_burn=rep.n_burn,
                           n_jobs=rep.n_jobs, plume=plume or self.simulate.plume,
                           model_overrides=overrides)


def config_from_dict(data: dict) -> RunConfig:
    _check_keys(data, ("seed", "out_dir", "grid", "simulate", "fit", "predict",
                       "evaluate", "report"), "config")
    kwargs = {}
    if "seed" in data:
        kwargs["seed"] = int(data["seed"])
    if "out_dir" in data:
        kwargs["out_dir"] = str(data["out_dir"])
    if "grid" in data:
        kwargs["grid"] = grid_from_dict(data["grid"])
    if "simulate" in data:
        kwargs["simulate"] = _build(SimulateSection, data["simulate"], "simulate", converters={
            "scenario": scenario_from_dict, "plume": plume_from_dict})
    if "fit" in data:
        kwargs["fit"] = _build(FitSection, data["fit"], "fit")
        _check_keys(kwargs["fit"].model, _MODEL_KEYS, "fit.model")
    if "predict" in data:
        kwargs["predict"] = _build(PredictSection, data["predict"], "predict")
    if "evaluate" in data:
        kwargs["evaluate"] = _build(EvaluateSection, data["evaluate"], "evaluate")
    if "report" in data:
        kwargs["report"] = _build(ReportSection, data["report"], "report", converters={
            "generations": tuple, "station_counts": tuple, "variants": tuple})
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"config {path} must be a mapping at top level")
    return config_from_dict(data)
