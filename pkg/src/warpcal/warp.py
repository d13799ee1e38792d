"""Spatial warping functions: spline displacement fields and reference warps.

A warp maps a unit-square location to the location where the forecast
should be read.  The estimated warp is a tensor-product B-spline
displacement field added to the identity; reference warps (identity,
translation, boundary-preserving diffeomorphism) are used to generate
synthetic data.  All warps clamp their output componentwise to [0,1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .spatial import BSplineBasis, tensor_eval

WARP_KINDS = ("identity", "translation", "diffeomorphism")


@dataclass(frozen=True)
class WarpField:
    """B-spline displacement field with coefficients of shape (J1, J2, 2)."""

    basis_x: BSplineBasis
    basis_y: BSplineBasis
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        object.__setattr__(self, "coeffs", c)
        expect = (self.basis_x.n_basis, self.basis_y.n_basis, 2)
        if c.shape != expect:
            raise ConfigurationError(f"warp coefficients must have shape {expect}, got {c.shape}")

    @classmethod
    def zero(cls, basis_x: BSplineBasis, basis_y: BSplineBasis) -> "WarpField":
        return cls(basis_x, basis_y, np.zeros((basis_x.n_basis, basis_y.n_basis, 2)))


@dataclass(frozen=True)
class AnalyticWarp:
    """Closed-form reference warp: identity, translation or diffeomorphism."""

    kind: str
    delta: tuple[float, float] = (0.0, 0.0)
    theta: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in WARP_KINDS:
            raise ConfigurationError(f"unknown warp kind {self.kind!r}; expected one of {WARP_KINDS}")

    @classmethod
    def identity(cls) -> "AnalyticWarp":
        return cls("identity")

    @classmethod
    def translation(cls, d1: float, d2: float) -> "AnalyticWarp":
        return cls("translation", delta=(float(d1), float(d2)))

    @classmethod
    def diffeomorphism(cls, theta1: float, theta2: float) -> "AnalyticWarp":
        return cls("diffeomorphism", theta=(float(theta1), float(theta2)))


def clamp_unit(points) -> np.ndarray:
    """Componentwise projection onto the unit square."""
    return np.clip(np.asarray(points, dtype=float), 0.0, 1.0)


def displacement(field: WarpField, points) -> np.ndarray:
    """Spline displacement w(s) - s before clamping; shape (..., 2)."""
    tb = tensor_eval(field.basis_x, field.basis_y, points)
    return np.einsum("...jk,jkl->...l", tb, field.coeffs)


def eval_warp(field: WarpField, points) -> np.ndarray:
    """Evaluate the spline warp: clamp(s + displacement(s))."""
    pts = np.asarray(points, dtype=float)
    return clamp_unit(pts + displacement(field, pts))


def analytic_displacement(warp: AnalyticWarp, points) -> np.ndarray:
    """Unclamped displacement of a reference warp at unit-square points."""
    pts = np.asarray(points, dtype=float)
    s1 = pts[..., 0]
    s2 = pts[..., 1]
    if warp.kind == "identity":
        return np.zeros_like(pts)
    if warp.kind == "translation":
        return np.broadcast_to(np.asarray(warp.delta, dtype=float), pts.shape).copy()
    if warp.kind == "diffeomorphism":
        t1, t2 = warp.theta
        d1 = -2.0 * t1 * s2 * np.sin(s1) * np.cos(s2) * (np.cos(np.pi * s1) + 1.0) * (np.cos(np.pi * s2) + 1.0)
        d2 = -2.0 * t2 * s1 * np.sin(s1) * np.sin(s2) * np.cos(np.pi * s1 / 2.0) * np.cos(3.0 * np.pi * s2 / 2.0)
        return np.stack([d1, d2], axis=-1)
    raise ConfigurationError(f"unknown warp kind {warp.kind!r}")


def eval_analytic(warp: AnalyticWarp, points) -> np.ndarray:
    """Evaluate a reference warp with clamping to the unit square."""
    pts = np.asarray(points, dtype=float)
    return clamp_unit(pts + analytic_displacement(warp, pts))


def apply_warp(warp, points) -> np.ndarray:
    """Apply a WarpField or AnalyticWarp to a whole point set, order preserved."""
    if isinstance(warp, WarpField):
        return eval_warp(warp, points)
    if isinstance(warp, AnalyticWarp):
        return eval_analytic(warp, points)
    raise ConfigurationError(f"not a warp: {type(warp).__name__}")


def fit_warp_field(warp: AnalyticWarp, basis_x: BSplineBasis, basis_y: BSplineBasis,
                   n_grid: int = 25) -> WarpField:
    """Least-squares projection of an analytic warp onto the spline basis.

    Fits the unclamped displacement on an n_grid x n_grid lattice of
    interior points; exact for any warp inside the basis span (e.g. a
    translation, via the partition of unity).
    """
    u = np.linspace(0.0, 1.0, n_grid)
    pts = np.stack(np.meshgrid(u, u, indexing="ij"), axis=-1).reshape(-1, 2)
    rows = tensor_eval(basis_x, basis_y, pts).reshape(len(pts), -1)
    target = analytic_displacement(warp, pts)
    coef, *_ = np.linalg.lstsq(rows, target, rcond=None)
    return WarpField(basis_x, basis_y, coef.reshape(basis_x.n_basis, basis_y.n_basis, 2))


def displacement_significance(disp_draws, level: float = 0.95):
    """Flag locations where the displacement credibly differs from zero.

    ``disp_draws`` holds posterior draws of w(s) - s with shape
    (n_draws, ..., 2).  For each coordinate the equal-tailed ``level``
    credible interval is formed; a coordinate is significant when the
    interval excludes zero, and the overall flag is the OR over the two
    coordinates.  Returns (per_coordinate, overall) boolean arrays.
    """
    draws = np.asarray(disp_draws, dtype=float)
    if draws.ndim < 2 or draws.shape[-1] != 2:
        raise ValueError("displacement draws must have shape (n_draws, ..., 2)")
    if draws.shape[0] < 2:
        raise ValueError("need at least two displacement draws")
    alpha = 1.0 - level
    lo = np.quantile(draws, alpha / 2.0, axis=0)
    hi = np.quantile(draws, 1.0 - alpha / 2.0, axis=0)
    per_coord = (lo > 0.0) | (hi < 0.0)
    return per_coord, per_coord.any(axis=-1)
