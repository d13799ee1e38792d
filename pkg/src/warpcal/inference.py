"""Bayesian downscaling model and its Metropolis-within-Gibbs sampler.

The observation model regresses station values on frequency-band
covariates of the forecast read at warped-then-snapped grid cells, plus a
spline intercept field.  Layer and intercept spline coefficients are
Gaussian with CAR penalties and are integrated out analytically for every
Metropolis move (warp coefficients and CAR correlations), then redrawn
from their exact Gaussian full conditional each sweep; variances follow
conjugate inverse-gamma updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular
from scipy.linalg.lapack import dpotrf, dtrtrs

from .errors import ConfigurationError, DataError, NumericalError
from .priors import (CarStructure, HyperPriors, beta_logpdf, chol_logdet,
                     halfnormal_logpdf, lattice_adjacency)
from .spatial import BSplineBasis, Grid, StationData, nearest_cell, tensor_rows
from .spectral import GriddedField, SpectralLayers, build_layers
from .warp import WarpField, clamp_unit
from .warp import displacement as warp_displacement

LOG_2PI = math.log(2.0 * math.pi)

VARIANTS = ("slr", "smooth", "warp", "full")


@dataclass(frozen=True)
class VariantSpec:
    """Which model components a fit variant activates."""

    name: str
    spatial_intercept: bool
    warp: bool
    smoothing: bool


_VARIANT_SPECS = {
    "slr": VariantSpec("slr", False, False, False),
    "smooth": VariantSpec("smooth", True, False, True),
    "warp": VariantSpec("warp", True, True, False),
    "full": VariantSpec("full", True, True, True),
}


def variant_spec(name: str) -> VariantSpec:
    try:
        return _VARIANT_SPECS[name]
    except KeyError:
        raise ConfigurationError(f"unknown variant {name!r}; expected one of {VARIANTS}") from None


def basis_counts_for_stations(n_stations: int) -> tuple[int, int]:
    """Reference basis sizes per axis, keyed on the station count."""
    table = {25: (6, 4), 50: (10, 5), 100: (12, 8)}
    key = min(table, key=lambda k: (abs(k - n_stations), k))
    return table[key]


@dataclass(frozen=True)
class ModelConfig:
    """Model sizes, MCMC protocol, and proposal settings for one fit."""

    intercept_basis: tuple[int, int] = (10, 5)
    warp_basis: tuple[int, int] = (10, 5)
    n_layers: int = 15
    n_iter: int = 20000
    n_burn: int = 10000
    warp_scale: float = 0.02
    rho_scale: float = 0.6
    warp_var_scale: float = 0.6
    warp_sites_per_block: int = 2
    adapt: bool = True
    adapt_target: float = 0.3
    seed: int = 0
    hyper: HyperPriors = field(default_factory=HyperPriors)

    def validate(self) -> None:
        if min(*self.intercept_basis, *self.warp_basis) < 4:
            raise ConfigurationError("basis counts must be at least 4 per axis")
        if self.n_layers < 1:
            raise ConfigurationError("n_layers must be positive")
        if not 0 <= self.n_burn < self.n_iter:
            raise ConfigurationError(f"need 0 <= n_burn < n_iter, got {self.n_burn}/{self.n_iter}")
        if min(self.warp_scale, self.rho_scale, self.warp_var_scale) <= 0:
            raise ConfigurationError("proposal scales must be positive")
        if not 0.0 < self.adapt_target < 1.0:
            raise ConfigurationError("adapt_target must lie in (0, 1)")
        if self.warp_sites_per_block < 1:
            raise ConfigurationError("warp_sites_per_block must be positive")


@dataclass
class ModelState:
    """Current parameter values during sampling."""

    intercept: float
    layer_coef: np.ndarray
    intercept_coef: np.ndarray
    warp_coef: np.ndarray
    noise_var: float
    intercept_var: float
    warp_var: float
    rho_intercept: float
    rho_warp: float
    rho_layer: float

    def summary(self) -> str:
        return (f"intercept={self.intercept:.4g} noise_var={self.noise_var:.4g} "
                f"intercept_var={self.intercept_var:.4g} warp_var={self.warp_var:.4g} "
                f"rho=({self.rho_intercept:.3f},{self.rho_warp:.3f},{self.rho_layer:.3f}) "
                f"|beta|={np.max(np.abs(self.layer_coef), initial=0):.4g} "
                f"|a|={np.max(np.abs(self.warp_coef), initial=0):.4g}")


@dataclass(frozen=True)
class DesignMatrix:
    """Per-observation covariates for the non-missing (station, time) pairs."""

    layer_cov: np.ndarray      # (n_obs, L) band values at warped nearest cells
    intercept_cov: np.ndarray  # (n_obs, JK) tensor-spline values at the stations
    y: np.ndarray
    station_idx: np.ndarray
    time_idx: np.ndarray

    @property
    def n_obs(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class PosteriorSamples:
    """Kept MCMC draws plus derived station displacements and diagnostics."""

    variant: str
    config: ModelConfig
    intercept: np.ndarray        # (m,)
    layer_coef: np.ndarray       # (m, L)
    intercept_coef: np.ndarray   # (m, JK)
    warp_coef: np.ndarray        # (m, S, 2)
    noise_var: np.ndarray
    intercept_var: np.ndarray
    warp_var: np.ndarray
    rho_intercept: np.ndarray
    rho_warp: np.ndarray
    rho_layer: np.ndarray
    displacement: np.ndarray     # (m, n_stations, 2) warp displacement at stations
    acceptance: dict
    proposal_scales: dict

    @property
    def n_kept(self) -> int:
        return len(self.intercept)

    def mean_warp_field(self) -> WarpField:
        bx = BSplineBasis(self.config.warp_basis[0])
        by = BSplineBasis(self.config.warp_basis[1])
        coef = self.warp_coef.mean(axis=0).reshape(bx.n_basis, by.n_basis, 2)
        return WarpField(bx, by, coef)


# ---------------------------------------------------------------------------
# Design construction


def _station_cells(grid, locations, disp):
    # flat cell index of clamp(s + disp); must match nearest_cell exactly,
    # including the lower-index tie rule
    u = np.clip(locations + disp, 0.0, 1.0) * (grid.nx, grid.ny)
    idx = np.floor(u).astype(int)
    tie = (u == idx) & (idx >= 1)
    idx = np.where(tie, idx - 1, idx)
    idx[:, 0] = np.clip(idx[:, 0], 0, grid.nx - 1)
    idx[:, 1] = np.clip(idx[:, 1], 0, grid.ny - 1)
    return idx[:, 1] * grid.nx + idx[:, 0]


def _gather_matrix(layers: SpectralLayers) -> np.ndarray:
    """Layer values laid out (T * n_cells, L) for fast row gathers."""
    return np.ascontiguousarray(layers.layers.reshape(layers.n_layers, -1).T)


def _layer_covariates(gather, grid, locations, disp, station_idx, time_idx):
    cell = _station_cells(grid, locations, disp)
    flat = time_idx * grid.n_cells + cell[station_idx]
    return gather.take(flat, axis=0)


def build_design(layers: SpectralLayers, warp: WarpField | None, stations: StationData,
                 intercept_basis: tuple[BSplineBasis, BSplineBasis] | None = None) -> DesignMatrix:
    """Assemble the regression design for all non-missing observations.

    Layer covariates are read at the nearest grid cell of the warped
    station location (identity warp when ``warp`` is None); intercept
    columns are tensor-spline values at the unwarped locations.
    """
    if stations.n_times != layers.n_times:
        raise DataError("stations and layers disagree on the number of time steps")
    time_idx, station_idx = np.nonzero(~stations.missing)
    if len(time_idx) == 0:
        raise DataError("no non-missing observations to fit")
    y = stations.values[time_idx, station_idx]
    if warp is None:
        disp = np.zeros_like(stations.locations)
    else:
        disp = warp_displacement(warp, stations.locations)
    layer_cov = _layer_covariates(_gather_matrix(layers), layers.grid,
                                  stations.locations, disp, station_idx, time_idx)
    if intercept_basis is None:
        intercept_cov = np.zeros((len(y), 0))
    else:
        intercept_cov = tensor_rows(intercept_basis[0], intercept_basis[1],
                                    stations.locations)[station_idx]
    return DesignMatrix(layer_cov, intercept_cov, y, station_idx, time_idx)


# ---------------------------------------------------------------------------
# Collapsed Gaussian likelihood


class _LayerCache(NamedTuple):
    X: np.ndarray
    XtX: np.ndarray
    XtB: np.ndarray
    XtY: np.ndarray
    Xt1: np.ndarray


class _CarTerm:
    """CAR precision with cached Cholesky log-determinant for the current rho."""

    def __init__(self, shape: tuple[int, int], rho: float):
        self.shape = shape
        self.adjacency = lattice_adjacency(*shape)
        self.counts = np.maximum(self.adjacency.sum(axis=1), 1.0)
        self.set_rho(rho)

    def build(self, rho: float) -> tuple[np.ndarray, float]:
        q = np.diag(self.counts) - rho * self.adjacency
        _, logdet = chol_logdet(q)
        return q, logdet

    def set_rho(self, rho: float) -> None:
        self.rho = rho
        self.precision, self.logdet = self.build(rho)

    def quadform(self, x) -> float:
        return float(np.sum(x * (self.precision @ x)))


class _Collapsed:
    """Marginal likelihood of y with layer and intercept coefficients integrated out.

    Conditional on the global intercept and the variances, y is Gaussian
    with covariance s2*I + s2*tau2 * X Dx X' + s02 * B S0 B'; everything is
    evaluated through the equivalent low-rank identity so each call costs
    O(n * (L+JK)^2).
    """

    def __init__(self, y: np.ndarray, intercept_cov: np.ndarray):
        self.y = y
        self.n = len(y)
        self.yty = float(y @ y)
        self.ysum = float(y.sum())
        self.B = intercept_cov
        self.BtB = intercept_cov.T @ intercept_cov
        self.BtY = intercept_cov.T @ y
        self.Bt1 = intercept_cov.sum(axis=0)

    def layer_cache(self, layer_cov: np.ndarray) -> _LayerCache:
        return _LayerCache(layer_cov, layer_cov.T @ layer_cov, layer_cov.T @ self.B,
                           layer_cov.T @ self.y, layer_cov.sum(axis=0))

    def loglik(self, lc: _LayerCache, intercept, noise_var, intercept_var, tau2,
               car_layer: _CarTerm | None, car_int: _CarTerm | None) -> float:
        n_layer = lc.X.shape[1]
        n_int = self.B.shape[1]
        r = n_layer + n_int
        rtr = self.yty - 2.0 * intercept * self.ysum + self.n * intercept ** 2
        base = self.n * (LOG_2PI + math.log(noise_var))
        if r == 0:
            return -0.5 * (base + rtr / noise_var)
        a = np.empty((r, r))
        u = np.empty(r)
        logdet_c = 0.0
        if n_layer:
            a[:n_layer, :n_layer] = car_layer.precision / (noise_var * tau2) + lc.XtX / noise_var
            u[:n_layer] = lc.XtY - intercept * lc.Xt1
            logdet_c += n_layer * math.log(noise_var * tau2) - car_layer.logdet
        if n_int:
            a[n_layer:, n_layer:] = car_int.precision / intercept_var + self.BtB / noise_var
            u[n_layer:] = self.BtY - intercept * self.Bt1
            logdet_c += n_int * math.log(intercept_var) - car_int.logdet
        if n_layer and n_int:
            a[:n_layer, n_layer:] = lc.XtB / noise_var
            a[n_layer:, :n_layer] = lc.XtB.T / noise_var
        chol, info = dpotrf(a, lower=1, clean=0, overwrite_a=1)
        if info != 0:
            raise NumericalError("marginal covariance is not positive definite")
        w, _ = dtrtrs(chol, u, lower=1)
        logdet_a = 2.0 * float(np.sum(np.log(np.diagonal(chol))))
        quad = rtr / noise_var - float(w @ w) / noise_var ** 2
        return -0.5 * (base + logdet_c + logdet_a + quad)


def marginal_loglik(design: DesignMatrix, intercept: float, noise_var: float,
                    intercept_var: float, tau2: float,
                    car_layer: CarStructure | None,
                    car_intercept: CarStructure | None) -> float:
    """Log marginal density of y with layer and intercept coefficients integrated out.

    ``car_layer`` / ``car_intercept`` carry the CAR correlations; pass None
    for blocks absent from the design (zero columns).
    """
    if noise_var <= 0.0 or intercept_var <= 0.0:
        raise ValueError("variances must be positive")
    if design.layer_cov.shape[1] and car_layer is None:
        raise ValueError("car_layer is required when layer covariates are present")
    if design.intercept_cov.shape[1] and car_intercept is None:
        raise ValueError("car_intercept is required when intercept covariates are present")
    coll = _Collapsed(design.y, design.intercept_cov)
    lc = coll.layer_cache(design.layer_cov)
    term_layer = _CarTerm(car_layer.shape, car_layer.rho) if design.layer_cov.shape[1] else None
    term_int = _CarTerm(car_intercept.shape, car_intercept.rho) if design.intercept_cov.shape[1] else None
    return coll.loglik(lc, intercept, noise_var, intercept_var, tau2, term_layer, term_int)


def conditional_loglik(design: DesignMatrix, intercept: float, layer_coef, intercept_coef,
                       noise_var: float) -> float:
    """Plain Gaussian log-likelihood given every coefficient (no marginalization)."""
    mu = intercept + design.layer_cov @ np.asarray(layer_coef) + design.intercept_cov @ np.asarray(intercept_coef)
    resid = design.y - mu
    return -0.5 * (design.n_obs * (LOG_2PI + math.log(noise_var)) + float(resid @ resid) / noise_var)


# ---------------------------------------------------------------------------
# Gibbs updates


def coefficient_full_conditional(design: DesignMatrix, noise_var, intercept_var, tau2,
                                 q_layer, q_intercept):
    """Gaussian full conditional of (intercept, layer_coef, intercept_coef).

    Returns (mean, chol_precision) with block order [intercept | layers |
    intercept splines]; the global intercept carries a flat prior.
    """
    x = design.layer_cov
    b = design.intercept_cov
    n_layer = x.shape[1]
    n_int = b.shape[1]
    p = 1 + n_layer + n_int
    w = np.concatenate([np.ones((design.n_obs, 1)), x, b], axis=1)
    a = w.T @ w / noise_var
    if n_layer:
        a[1:1 + n_layer, 1:1 + n_layer] += q_layer / (noise_var * tau2)
    if n_int:
        a[1 + n_layer:, 1 + n_layer:] += q_intercept / intercept_var
    rhs = w.T @ design.y / noise_var
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("coefficient full conditional is singular") from exc
    half = solve_triangular(chol, rhs, lower=True, check_finite=False)
    mean = solve_triangular(chol.T, half, lower=False, check_finite=False)
    return mean, chol


def gibbs_draw_coefficients(design: DesignMatrix, noise_var, intercept_var, tau2,
                            q_layer, q_intercept, rng):
    """Exact draw from the joint Gaussian full conditional of all coefficients."""
    mean, chol = coefficient_full_conditional(design, noise_var, intercept_var, tau2,
                                              q_layer, q_intercept)
    z = rng.standard_normal(len(mean))
    draw = mean + solve_triangular(chol.T, z, lower=False, check_finite=False)
    n_layer = design.layer_cov.shape[1]
    return float(draw[0]), draw[1:1 + n_layer], draw[1 + n_layer:]


def gibbs_draw_variances(design: DesignMatrix, intercept, layer_coef, intercept_coef,
                         tau2, q_layer, q_intercept, hyper: HyperPriors, rng):
    """Conjugate inverse-gamma draws of the noise and intercept-field variances.

    The layer-coefficient quadratic form enters the noise-variance rate
    because that prior scales with the noise variance.
    """
    layer_coef = np.asarray(layer_coef, dtype=float)
    intercept_coef = np.asarray(intercept_coef, dtype=float)
    resid = design.y - intercept - design.layer_cov @ layer_coef - design.intercept_cov @ intercept_coef
    ssr = float(resid @ resid)
    n_layer = len(layer_coef)
    beta_qf = float(layer_coef @ q_layer @ layer_coef) if n_layer else 0.0
    shape = hyper.ig_shape + 0.5 * (design.n_obs + n_layer)
    rate = hyper.ig_rate + 0.5 * ssr + beta_qf / (2.0 * tau2)
    # the gamma draw can underflow to 0.0 for near-prior shapes; keep it positive
    noise_var = rate / max(rng.gamma(shape), 1e-300)
    intercept_var = None
    if len(intercept_coef):
        b_qf = float(intercept_coef @ q_intercept @ intercept_coef)
        intercept_var = ((hyper.ig_rate + 0.5 * b_qf)
                         / max(rng.gamma(hyper.ig_shape + 0.5 * len(intercept_coef)), 1e-300))
    return noise_var, intercept_var


# ---------------------------------------------------------------------------
# Metropolis machinery


def random_walk_metropolis(rng, current, log_density, current_logdens, scale):
    """One Gaussian random-walk Metropolis move; returns (value, logdens, accepted)."""
    proposal = current + scale * rng.standard_normal(np.shape(current))
    try:
        prop_logdens = log_density(proposal)
    except NumericalError:
        prop_logdens = -math.inf
    if prop_logdens > -math.inf and math.log(rng.uniform()) < prop_logdens - current_logdens:
        return proposal, prop_logdens, True
    return current, current_logdens, False


class _AdaptiveScale:
    """Robbins-Monro scale adaptation toward a target acceptance rate.

    Active only during burn-in; frozen afterwards so the kept chain uses a
    fixed kernel.
    """

    def __init__(self, scale, target):
        self.scale = float(scale)
        self.target = target
        self.count = 0
        self.frozen = False

    def update(self, accepted: bool) -> None:
        if self.frozen:
            return
        self.count += 1
        step = min(0.25, 3.0 * self.count ** -0.7)
        self.scale *= math.exp(step * ((1.0 if accepted else 0.0) - self.target))
        self.scale = min(max(self.scale, 1e-5), 5.0)


class _BlockStats:
    def __init__(self):
        self.proposed = 0
        self.accepted = 0

    def add(self, accepted: bool):
        self.proposed += 1
        self.accepted += int(accepted)

    @property
    def rate(self):
        return self.accepted / self.proposed if self.proposed else math.nan


def _logit(p):
    return math.log(p) - math.log1p(-p)


def _expit(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


# ---------------------------------------------------------------------------
# Problem assembly and the sampler


@dataclass
class FitProblem:
    """Preprocessed data, bases and priors for one MCMC run."""

    y: np.ndarray
    station_idx: np.ndarray
    time_idx: np.ndarray
    locations: np.ndarray
    intercept_rows: np.ndarray   # (N, JK), zero columns when unused
    warp_rows: np.ndarray | None  # (N, S)
    layers: SpectralLayers
    config: ModelConfig
    variant: VariantSpec

    @property
    def n_layers_eff(self) -> int:
        return self.layers.n_layers

    @property
    def n_stations(self) -> int:
        return len(self.locations)


def build_problem(forecast: GriddedField, stations: StationData, config: ModelConfig,
                  variant: str = "full") -> FitProblem:
    """Validate inputs, decompose the forecast, and precompute station bases."""
    config.validate()
    vs = variant_spec(variant)
    n_layers_eff = config.n_layers if vs.smoothing else 1
    layers = build_layers(forecast, n_layers_eff)
    if stations.n_times != forecast.n_times:
        raise DataError("stations and forecast disagree on the number of time steps")
    time_idx, station_idx = np.nonzero(~stations.missing)
    if len(time_idx) == 0:
        raise DataError("no non-missing observations to fit")
    y = stations.values[time_idx, station_idx]
    if vs.spatial_intercept:
        bx0 = BSplineBasis(config.intercept_basis[0])
        by0 = BSplineBasis(config.intercept_basis[1])
        intercept_rows = tensor_rows(bx0, by0, stations.locations)
    else:
        intercept_rows = np.zeros((stations.n_stations, 0))
    warp_rows = None
    if vs.warp:
        bxw = BSplineBasis(config.warp_basis[0])
        byw = BSplineBasis(config.warp_basis[1])
        warp_rows = tensor_rows(bxw, byw, stations.locations)
    return FitProblem(y, station_idx, time_idx, stations.locations, intercept_rows,
                      warp_rows, layers, config, vs)


def prior_problem(config: ModelConfig, variant: str = "full") -> FitProblem:
    """A zero-observation problem whose sampler targets the joint prior."""
    config.validate()
    vs = variant_spec(variant)
    n_layers_eff = config.n_layers if vs.smoothing else 1
    grid = Grid(8, 8)
    layers = build_layers(GriddedField(grid, np.zeros((1, 8, 8))), n_layers_eff)
    empty = np.zeros(0, dtype=int)
    locations = np.array([[0.5, 0.5]])
    n_int = config.intercept_basis[0] * config.intercept_basis[1] if vs.spatial_intercept else 0
    intercept_rows = np.zeros((1, n_int))
    warp_rows = None
    if vs.warp:
        bxw = BSplineBasis(config.warp_basis[0])
        byw = BSplineBasis(config.warp_basis[1])
        warp_rows = tensor_rows(bxw, byw, locations)
    return FitProblem(np.zeros(0), empty, empty, locations, intercept_rows,
                      warp_rows, layers, config, vs)


def run_mcmc(problem: FitProblem) -> PosteriorSamples:
    """Run the Metropolis-within-Gibbs sampler for a prepared problem.

    Works with zero observations as well, in which case every move targets
    the prior (used to validate prior recovery).
    """
    cfg = problem.config
    vs = problem.variant
    hyper = cfg.hyper
    tau2 = hyper.tau2
    rng = np.random.default_rng(cfg.seed)

    n_layer = problem.n_layers_eff
    n_int = problem.intercept_rows.shape[1]
    n_sites = problem.warp_rows.shape[1] if vs.warp else 0
    n_sta = problem.n_stations
    grid = problem.layers.grid
    gather = _gather_matrix(problem.layers)

    car_layer = _CarTerm((n_layer, 1), 0.9)
    car_int = _CarTerm(cfg.intercept_basis, 0.9) if vs.spatial_intercept else None
    car_warp = _CarTerm(cfg.warp_basis, 0.9) if vs.warp else None

    state = ModelState(
        intercept=0.0,
        layer_coef=np.zeros(n_layer),
        intercept_coef=np.zeros(n_int),
        warp_coef=np.zeros((n_sites, 2)),
        noise_var=1.0,
        intercept_var=1.0,
        warp_var=0.01,
        rho_intercept=0.9,
        rho_warp=0.9,
        rho_layer=0.9,
    )

    coll = _Collapsed(problem.y, problem.intercept_rows[problem.station_idx]
                      if n_int else np.zeros((len(problem.y), 0)))
    disp = np.zeros((n_sta, 2))
    lc = coll.layer_cache(_layer_covariates(gather, grid, problem.locations, disp,
                                            problem.station_idx, problem.time_idx))

    def mll(lcache, intercept, noise_var, intercept_var):
        return coll.loglik(lcache, intercept, noise_var, intercept_var, tau2,
                           car_layer, car_int)

    current_mll = mll(lc, state.intercept, state.noise_var, state.intercept_var)
    warp_qf = 0.0  # sum over both coordinates of a' Qw a

    site_blocks = [np.arange(i, min(i + cfg.warp_sites_per_block, n_sites))
                   for i in range(0, n_sites, cfg.warp_sites_per_block)]
    scales = {
        "warp": [_AdaptiveScale(cfg.warp_scale, cfg.adapt_target) for _ in site_blocks],
        "warp_var": _AdaptiveScale(cfg.warp_var_scale, cfg.adapt_target),
        "warp_rescale": _AdaptiveScale(cfg.warp_var_scale, cfg.adapt_target),
        "rho_warp": _AdaptiveScale(cfg.rho_scale, cfg.adapt_target),
        "rho_intercept": _AdaptiveScale(cfg.rho_scale, cfg.adapt_target),
        "rho_layer": _AdaptiveScale(cfg.rho_scale, cfg.adapt_target),
    }
    stats = {name: _BlockStats() for name in
             ("warp", "warp_var", "warp_rescale", "rho_warp", "rho_intercept", "rho_layer")}

    n_kept = cfg.n_iter - cfg.n_burn
    kept = {
        "intercept": np.empty(n_kept),
        "layer_coef": np.empty((n_kept, n_layer)),
        "intercept_coef": np.empty((n_kept, n_int)),
        "warp_coef": np.empty((n_kept, n_sites, 2)),
        "noise_var": np.empty(n_kept),
        "intercept_var": np.empty(n_kept),
        "warp_var": np.empty(n_kept),
        "rho_intercept": np.empty(n_kept),
        "rho_warp": np.empty(n_kept),
        "rho_layer": np.empty(n_kept),
        "displacement": np.empty((n_kept, n_sta, 2)),
    }

    for it in range(cfg.n_iter):
        post_burn = it >= cfg.n_burn
        if post_burn and cfg.adapt:
            for group in scales["warp"]:
                group.frozen = True
            for name in ("warp_var", "warp_rescale", "rho_warp", "rho_intercept", "rho_layer"):
                scales[name].frozen = True

        if vs.warp:
            for block_i, sites in enumerate(site_blocks):
                adapt = scales["warp"][block_i]
                delta = adapt.scale * rng.standard_normal((len(sites), 2))
                prop_coef = state.warp_coef.copy()
                prop_coef[sites] += delta
                prop_disp = disp + problem.warp_rows[:, sites] @ delta
                prop_lc = coll.layer_cache(_layer_covariates(
                    gather, grid, problem.locations, prop_disp,
                    problem.station_idx, problem.time_idx))
                prop_qf = car_warp.quadform(prop_coef)
                try:
                    prop_mll = mll(prop_lc, state.intercept, state.noise_var, state.intercept_var)
                except NumericalError:
                    prop_mll = -math.inf
                log_ratio = (prop_mll - current_mll) - (prop_qf - warp_qf) / (2.0 * state.warp_var)
                accepted = (prop_mll > -math.inf
                            and math.log(rng.uniform()) < log_ratio)
                if accepted:
                    state.warp_coef = prop_coef
                    disp = prop_disp
                    lc = prop_lc
                    current_mll = prop_mll
                    warp_qf = prop_qf
                if post_burn:
                    stats["warp"].add(accepted)
                adapt.update(accepted)

            # warp variance: Half-Normal prior, log-scale random walk.  The
            # conditional is improper as v -> 0 when the warp is exactly
            # zero, so proposals below a tiny floor are rejected.
            def warp_var_logpost(log_v):
                v = math.exp(log_v)
                if not 1e-8 <= v < math.inf:
                    return -math.inf
                return (car_warp.logdet - n_sites * math.log(2.0 * math.pi * v)
                        - warp_qf / (2.0 * v)
                        + halfnormal_logpdf(v, hyper.halfnormal_scale) + log_v)

            cur = warp_var_logpost(math.log(state.warp_var))
            new_log_v, _, accepted = random_walk_metropolis(
                rng, math.log(state.warp_var), warp_var_logpost, cur,
                scales["warp_var"].scale)
            state.warp_var = math.exp(new_log_v)
            if post_burn:
                stats["warp_var"].add(accepted)
            scales["warp_var"].update(accepted)

            # joint rescale (a, v) -> (sqrt(c) a, c v): leaves the CAR
            # exponent invariant, so it traverses the coefficient-variance
            # funnel that single-site moves cannot cross
            z = scales["warp_rescale"].scale * rng.standard_normal()
            c = math.exp(z)
            new_var = c * state.warp_var
            accepted = False
            if 1e-8 <= new_var < math.inf:
                root_c = math.sqrt(c)
                prop_coef = root_c * state.warp_coef
                prop_disp = root_c * disp
                prop_lc = coll.layer_cache(_layer_covariates(
                    gather, grid, problem.locations, prop_disp,
                    problem.station_idx, problem.time_idx))
                try:
                    prop_mll = mll(prop_lc, state.intercept, state.noise_var,
                                   state.intercept_var)
                except NumericalError:
                    prop_mll = -math.inf
                log_ratio = (prop_mll - current_mll
                             + halfnormal_logpdf(new_var, hyper.halfnormal_scale)
                             - halfnormal_logpdf(state.warp_var, hyper.halfnormal_scale)
                             + z)
                if prop_mll > -math.inf and math.log(rng.uniform()) < log_ratio:
                    accepted = True
                    state.warp_coef = prop_coef
                    state.warp_var = new_var
                    disp = prop_disp
                    lc = prop_lc
                    current_mll = prop_mll
                    warp_qf = c * warp_qf
            if post_burn:
                stats["warp_rescale"].add(accepted)
            scales["warp_rescale"].update(accepted)

            # warp CAR correlation: logit-scale random walk
            def rho_warp_logpost(logit_rho):
                rho = _expit(logit_rho)
                if not 0.0 < rho < 1.0:
                    return -math.inf
                q, logdet = car_warp.build(rho)
                qf = float(np.sum(state.warp_coef * (q @ state.warp_coef)))
                return (logdet - qf / (2.0 * state.warp_var)
                        + beta_logpdf(rho, hyper.beta_a, hyper.beta_b)
                        + math.log(rho) + math.log1p(-rho))

            cur = rho_warp_logpost(_logit(state.rho_warp))
            new_logit, _, accepted = random_walk_metropolis(
                rng, _logit(state.rho_warp), rho_warp_logpost, cur,
                scales["rho_warp"].scale)
            if accepted:
                state.rho_warp = _expit(new_logit)
                car_warp.set_rho(state.rho_warp)
                warp_qf = car_warp.quadform(state.warp_coef)
            if post_burn:
                stats["rho_warp"].add(accepted)
            scales["rho_warp"].update(accepted)

            # independence refresh from the Beta prior; the prior terms
            # cancel, leaving the CAR density ratio, so this jumps across
            # the support when the coefficients permit it
            cand = rng.beta(hyper.beta_a, hyper.beta_b)
            accepted = False
            if 0.0 < cand < 1.0:
                try:
                    q_new, logdet_new = car_warp.build(cand)
                except NumericalError:
                    q_new = None
                if q_new is not None:
                    qf_new = float(np.sum(state.warp_coef * (q_new @ state.warp_coef)))
                    log_ratio = (logdet_new - qf_new / (2.0 * state.warp_var)
                                 - car_warp.logdet + warp_qf / (2.0 * state.warp_var))
                    if math.log(rng.uniform()) < log_ratio:
                        accepted = True
                        state.rho_warp = cand
                        car_warp.rho = cand
                        car_warp.precision, car_warp.logdet = q_new, logdet_new
                        warp_qf = qf_new
            if post_burn:
                stats["rho_warp"].add(accepted)

        if vs.spatial_intercept:
            def rho_int_logpost(logit_rho):
                rho = _expit(logit_rho)
                if not 0.0 < rho < 1.0:
                    return -math.inf
                saved = (car_int.rho, car_int.precision, car_int.logdet)
                try:
                    car_int.precision, car_int.logdet = car_int.build(rho)
                    value = mll(lc, state.intercept, state.noise_var, state.intercept_var)
                finally:
                    car_int.rho, car_int.precision, car_int.logdet = saved
                return (value + beta_logpdf(rho, hyper.beta_a, hyper.beta_b)
                        + math.log(rho) + math.log1p(-rho))

            cur = (current_mll + beta_logpdf(state.rho_intercept, hyper.beta_a, hyper.beta_b)
                   + math.log(state.rho_intercept) + math.log1p(-state.rho_intercept))
            new_logit, _, accepted = random_walk_metropolis(
                rng, _logit(state.rho_intercept), rho_int_logpost, cur,
                scales["rho_intercept"].scale)
            if accepted:
                state.rho_intercept = _expit(new_logit)
                car_int.set_rho(state.rho_intercept)
                current_mll = mll(lc, state.intercept, state.noise_var, state.intercept_var)
            if post_burn:
                stats["rho_intercept"].add(accepted)
            scales["rho_intercept"].update(accepted)

        def rho_layer_logpost(logit_rho):
            rho = _expit(logit_rho)
            if not 0.0 < rho < 1.0:
                return -math.inf
            saved = (car_layer.rho, car_layer.precision, car_layer.logdet)
            try:
                car_layer.precision, car_layer.logdet = car_layer.build(rho)
                value = mll(lc, state.intercept, state.noise_var, state.intercept_var)
            finally:
                car_layer.rho, car_layer.precision, car_layer.logdet = saved
            return (value + beta_logpdf(rho, hyper.beta_a, hyper.beta_b)
                    + math.log(rho) + math.log1p(-rho))

        cur = (current_mll + beta_logpdf(state.rho_layer, hyper.beta_a, hyper.beta_b)
               + math.log(state.rho_layer) + math.log1p(-state.rho_layer))
        new_logit, _, accepted = random_walk_metropolis(
            rng, _logit(state.rho_layer), rho_layer_logpost, cur,
            scales["rho_layer"].scale)
        if accepted:
            state.rho_layer = _expit(new_logit)
            car_layer.set_rho(state.rho_layer)
            current_mll = mll(lc, state.intercept, state.noise_var, state.intercept_var)
        if post_burn:
            stats["rho_layer"].add(accepted)
        scales["rho_layer"].update(accepted)

        # exact conjugate redraw of all regression coefficients, then variances
        design = DesignMatrix(lc.X, coll.B, problem.y, problem.station_idx, problem.time_idx)
        if len(problem.y):
            state.intercept, state.layer_coef, state.intercept_coef = gibbs_draw_coefficients(
                design, state.noise_var, state.intercept_var, tau2,
                car_layer.precision, car_int.precision if car_int else None, rng)
        else:
            chol_x = np.linalg.cholesky(car_layer.precision)
            state.layer_coef = math.sqrt(state.noise_var * tau2) * solve_triangular(
                chol_x.T, rng.standard_normal(n_layer), lower=False, check_finite=False)
            if n_int:
                chol_0 = np.linalg.cholesky(car_int.precision)
                state.intercept_coef = math.sqrt(state.intercept_var) * solve_triangular(
                    chol_0.T, rng.standard_normal(n_int), lower=False, check_finite=False)
        noise_var, intercept_var = gibbs_draw_variances(
            design, state.intercept, state.layer_coef, state.intercept_coef, tau2,
            car_layer.precision, car_int.precision if car_int else None, hyper, rng)
        state.noise_var = noise_var
        if intercept_var is not None:
            state.intercept_var = intercept_var

        current_mll = mll(lc, state.intercept, state.noise_var, state.intercept_var)
        if not math.isfinite(current_mll):
            raise NumericalError(
                f"non-finite marginal likelihood at iteration {it}: {state.summary()}")

        if post_burn:
            k = it - cfg.n_burn
            kept["intercept"][k] = state.intercept
            kept["layer_coef"][k] = state.layer_coef
            kept["intercept_coef"][k] = state.intercept_coef
            kept["warp_coef"][k] = state.warp_coef
            kept["noise_var"][k] = state.noise_var
            kept["intercept_var"][k] = state.intercept_var
            kept["warp_var"][k] = state.warp_var
            kept["rho_intercept"][k] = state.rho_intercept
            kept["rho_warp"][k] = state.rho_warp
            kept["rho_layer"][k] = state.rho_layer
            kept["displacement"][k] = disp

    acceptance = {name: s.rate for name, s in stats.items() if s.proposed}
    final_scales = {
        "warp": [g.scale for g in scales["warp"]],
        "warp_var": scales["warp_var"].scale,
        "warp_rescale": scales["warp_rescale"].scale,
        "rho_warp": scales["rho_warp"].scale,
        "rho_intercept": scales["rho_intercept"].scale,
        "rho_layer": scales["rho_layer"].scale,
    }
    return PosteriorSamples(
        variant=vs.name, config=cfg,
        intercept=kept["intercept"], layer_coef=kept["layer_coef"],
        intercept_coef=kept["intercept_coef"], warp_coef=kept["warp_coef"],
        noise_var=kept["noise_var"], intercept_var=kept["intercept_var"],
        warp_var=kept["warp_var"], rho_intercept=kept["rho_intercept"],
        rho_warp=kept["rho_warp"], rho_layer=kept["rho_layer"],
        displacement=kept["displacement"], acceptance=acceptance,
        proposal_scales=final_scales)


def fit(forecast: GriddedField, stations: StationData, config: ModelConfig,
        variant: str = "full") -> PosteriorSamples:
    """Fit one model variant to the non-missing station observations."""
    return run_mcmc(build_problem(forecast, stations, config, variant))


# ---------------------------------------------------------------------------
# Posterior prediction


@dataclass(frozen=True)
class PredictiveDraws:
    """Per-iteration predictive output at (station, time) pairs.

    ``mean_draws`` holds the latent regression mean per kept iteration;
    ``draws`` adds a fresh observation-noise deviate to each mean.
    """

    station_idx: np.ndarray
    time_idx: np.ndarray
    mean_draws: np.ndarray  # (m, n_pred)
    draws: np.ndarray       # (m, n_pred)
    noise_var: np.ndarray   # (m,)


def posterior_predict(samples: PosteriorSamples, layers: SpectralLayers,
                      stations: StationData, times, seed: int = 0) -> PredictiveDraws:
    """Predictive draws for every station at the requested time indices."""
    times = np.asarray(times, dtype=int)
    if times.size == 0:
        raise ValueError("no prediction times requested")
    if times.min() < 0 or times.max() >= layers.n_times:
        raise ValueError("prediction time index out of range")
    n_layer = samples.layer_coef.shape[1]
    if layers.n_layers != n_layer:
        raise ValueError(f"layers were built with L={layers.n_layers}, samples expect {n_layer}")
    rng = np.random.default_rng(seed)
    m = samples.n_kept
    n_sta = stations.n_stations
    grid = layers.grid
    gather = _gather_matrix(layers)

    if samples.warp_coef.shape[1]:
        bx = BSplineBasis(samples.config.warp_basis[0])
        by = BSplineBasis(samples.config.warp_basis[1])
        rows = tensor_rows(bx, by, stations.locations)  # (N, S)
        disp = np.einsum("ns,msl->mnl", rows, samples.warp_coef)
    else:
        disp = np.zeros((m, n_sta, 2))
    warped = clamp_unit(stations.locations[None, :, :] + disp)
    r, c = nearest_cell(grid, warped)
    cell = r * grid.nx + c  # (m, N)

    mu = np.empty((m, len(times) * n_sta))
    if samples.intercept_coef.shape[1]:
        bx0 = BSplineBasis(samples.config.intercept_basis[0])
        by0 = BSplineBasis(samples.config.intercept_basis[1])
        field_rows = tensor_rows(bx0, by0, stations.locations)
        intercept_field = samples.intercept_coef @ field_rows.T  # (m, N)
    else:
        intercept_field = np.zeros((m, n_sta))
    for j, t in enumerate(times):
        covs = gather.take(t * grid.n_cells + cell, axis=0)  # (m, N, L)
        mu[:, j * n_sta:(j + 1) * n_sta] = (samples.intercept[:, None] + intercept_field
                                            + np.einsum("mnl,ml->mn", covs, samples.layer_coef))
    draws = mu + np.sqrt(samples.noise_var)[:, None] * rng.standard_normal(mu.shape)
    station_idx = np.tile(np.arange(n_sta), len(times))
    time_idx = np.repeat(times, n_sta)
    return PredictiveDraws(station_idx, time_idx, mu, draws, samples.noise_var.copy())


def mixture_moments(mean_draws, noise_var):
    """Analytic moments of the Gaussian predictive mixture per observation.

    Returns (mean, sd, skewness, kurtosis) arrays; kurtosis is the raw
    fourth standardized moment (3 for a Gaussian).
    """
    mu = np.asarray(mean_draws, dtype=float)
    v = np.asarray(noise_var, dtype=float)[:, None]
    center = mu.mean(axis=0)
    d = mu - center
    m2 = np.mean(v + d ** 2, axis=0)
    m3 = np.mean(3.0 * v * d + d ** 3, axis=0)
    m4 = np.mean(3.0 * v ** 2 + 6.0 * v * d ** 2 + d ** 4, axis=0)
    sd = np.sqrt(m2)
    skew = m3 / m2 ** 1.5
    kurt = m4 / m2 ** 2
    return center, sd, skew, kurt


def summarize_predictions(pred: PredictiveDraws, level: float = 0.95) -> dict:
    """Predictive summary per observation: mixture moments plus interval bounds."""
    mean, sd, skew, kurt = mixture_moments(pred.mean_draws, pred.noise_var)
    alpha = 1.0 - level
    lo = np.quantile(pred.draws, alpha / 2.0, axis=0)
    hi = np.quantile(pred.draws, 1.0 - alpha / 2.0, axis=0)
    return {"station_idx": pred.station_idx, "time_idx": pred.time_idx,
            "mean": mean, "sd": sd, "skewness": skew, "kurtosis": kurt,
            "lo": lo, "hi": hi}
