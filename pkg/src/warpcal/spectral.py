"""Frequency-band decomposition of gridded forecasts.

Each time slice is expanded in the 2D discrete Fourier basis; Bernstein
polynomial weights of the aliased frequency magnitude split the spectrum
into L bands whose inverse transforms sum back to the original field.
A low-frequency band captures large-scale structure (plumes), the high
bands small-scale noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import comb

from .errors import ConfigurationError, NumericalError
from .spatial import Grid

IMAG_TOL = 1e-9


@dataclass(frozen=True)
class GriddedField:
    """Space-time field on a regular grid: values has shape (T, ny, nx)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 3 or vals.shape[1:] != (self.grid.ny, self.grid.nx):
            raise ConfigurationError(
                f"field values must be (T, {self.grid.ny}, {self.grid.nx}), got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ConfigurationError("field values must be finite")

    @property
    def n_times(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SpectralLayers:
    """L frequency-band fields whose sum reproduces the source field."""

    grid: Grid
    layers: np.ndarray  # (L, T, ny, nx)

    @property
    def n_layers(self) -> int:
        return self.layers.shape[0]

    @property
    def n_times(self) -> int:
        return self.layers.shape[1]


def dft2(field_slice) -> np.ndarray:
    """Forward 2D DFT with 1/P normalization: Z_p = (1/P) sum_q e^{i w_p.q} X_q."""
    x = np.asarray(field_slice, dtype=float)
    return np.fft.ifft2(x)


def idft2(coeffs) -> np.ndarray:
    """Inverse transform sum_p e^{-i w_p.q} Z_p, discarding tiny imaginary residue.

    Raises NumericalError when the imaginary part exceeds the roundoff
    envelope, which signals coefficients that did not come from a real field.
    """
    z = np.asarray(coeffs, dtype=complex)
    out = np.fft.fft2(z)
    resid = np.max(np.abs(out.imag)) if out.size else 0.0
    scale = max(1.0, np.max(np.abs(out.real))) if out.size else 1.0
    if resid > IMAG_TOL * scale:
        raise NumericalError(f"imaginary residue {resid:.3e} exceeds tolerance; coefficients are not conjugate-symmetric")
    return np.ascontiguousarray(out.real)


def grid_frequencies(ny: int, nx: int) -> np.ndarray:
    """Angular DFT frequencies 2*pi*(p_row/ny, p_col/nx), shape (ny, nx, 2)."""
    wr = 2.0 * np.pi * np.arange(ny) / ny
    wc = 2.0 * np.pi * np.arange(nx) / nx
    return np.stack(np.meshgrid(wr, wc, indexing="ij"), axis=-1)


def alias_map(omega) -> np.ndarray:
    """Fold frequencies in [0, 2*pi) onto their minimal-magnitude aliases.

    Components above pi represent negative frequencies; folding them to
    2*pi - w keeps every component in [0, pi] so the weight argument
    ||delta||/(2*pi) never exceeds sqrt(2)/2.
    """
    w = np.asarray(omega, dtype=float)
    return np.where(w > np.pi, 2.0 * np.pi - w, w)


def bernstein_weights(n_layers: int, delta) -> np.ndarray:
    """Bernstein polynomial weights of the aliased frequency magnitude.

    delta has shape (..., 2); returns (..., L) nonnegative weights that
    sum to one over the layer axis.
    """
    if n_layers < 1:
        raise ConfigurationError("need at least one layer")
    d = np.asarray(delta, dtype=float)
    x = np.sqrt(np.sum(d * d, axis=-1)) / (2.0 * np.pi)
    if np.any(x > 1.0):
        raise ValueError("aliased frequency magnitude exceeds 2*pi")
    ell = np.arange(n_layers)
    return comb(n_layers - 1, ell) * x[..., None] ** ell * (1.0 - x[..., None]) ** (n_layers - 1 - ell)


def build_layers(field: GriddedField, n_layers: int) -> SpectralLayers:
    """Decompose every time slice into L frequency-band layers.

    Layers are computed once per fit and cached by the caller; they depend
    only on the data, never on model parameters.
    """
    omega = grid_frequencies(field.grid.ny, field.grid.nx)
    weights = bernstein_weights(n_layers, alias_map(omega))  # (ny, nx, L)
    z = np.fft.ifft2(field.values, axes=(-2, -1))  # (T, ny, nx)
    weighted = weights.transpose(2, 0, 1)[:, None, :, :] * z[None, :, :, :]
    out = np.fft.fft2(weighted, axes=(-2, -1))
    resid = np.max(np.abs(out.imag))
    scale = max(1.0, np.max(np.abs(out.real)))
    if resid > IMAG_TOL * scale:
        raise NumericalError(f"imaginary residue {resid:.3e} in layer reconstruction")
    return SpectralLayers(field.grid, np.ascontiguousarray(out.real))


def smoothed_forecast(layers: SpectralLayers, alpha) -> GriddedField:
    """Pointwise combination sum_l alpha_l * layer_l as a gridded field."""
    a = np.asarray(alpha, dtype=float)
    if a.shape != (layers.n_layers,):
        raise ValueError(f"alpha must have length {layers.n_layers}, got shape {a.shape}")
    return GriddedField(layers.grid, np.einsum("l,ltyx->tyx", a, layers.layers))
