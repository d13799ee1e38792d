"""Warp-aware Bayesian calibration of gridded forecasts against point observations."""

from .errors import ConfigurationError, DataError, NumericalError
from .evaluation import (PlumeConfig, Scenario, ScoreReport, StudyConfig,
                         aggregate_study, crps_normal, crps_sample, generate,
                         run_study, score, score_predictions, synthetic_plume,
                         train_test_times)
from .inference import (DesignMatrix, ModelConfig, PosteriorSamples, PredictiveDraws,
                        basis_counts_for_stations, build_design, fit,
                        marginal_loglik, posterior_predict, summarize_predictions)
from .priors import CarStructure, HyperPriors, car_gaussian_logpdf, car_precision
from .spatial import (BSplineBasis, Grid, StationData, bspline_eval, denormalize,
                      nearest_cell, normalize, tensor_eval)
from .spectral import (GriddedField, SpectralLayers, alias_map, bernstein_weights,
                       build_layers, dft2, idft2, smoothed_forecast)
from .warp import (AnalyticWarp, WarpField, apply_warp, displacement,
                   displacement_significance, eval_analytic, eval_warp, fit_warp_field)

__version__ = "0.1.0"
