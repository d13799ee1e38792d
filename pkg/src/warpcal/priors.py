"""CAR precision structures over coefficient lattices and hyperprior densities.

Coefficient vectors indexed by a J x K lattice (or a length-L chain) get
mean-zero Gaussian priors with precision Q = M - rho*E, where E is the
rook adjacency and M the diagonal of neighbor counts.  Isolated nodes
(only possible on a 1x1 lattice) get unit diagonal so Q stays positive
definite and the prior reduces to a univariate normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import betaln, gammaln

from .errors import NumericalError


def lattice_adjacency(n_rows: int, n_cols: int) -> np.ndarray:
    """Rook adjacency of a row-major n_rows x n_cols integer lattice."""
    n = n_rows * n_cols
    adj = np.zeros((n, n))
    idx = np.arange(n).reshape(n_rows, n_cols)
    right = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=-1)
    down = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=-1)
    for a, b in np.concatenate([right, down]):
        adj[a, b] = adj[b, a] = 1.0
    return adj


@dataclass(frozen=True)
class CarStructure:
    """First-order CAR neighborhood on a lattice; shape (J, 1) gives a chain."""

    shape: tuple[int, int]
    rho: float = 0.0

    def __post_init__(self):
        j, k = self.shape
        if j < 1 or k < 1:
            raise ValueError(f"lattice dimensions must be positive, got {self.shape}")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"CAR correlation must lie in [0, 1), got {self.rho}")

    @property
    def n_nodes(self) -> int:
        return self.shape[0] * self.shape[1]

    @cached_property
    def adjacency(self) -> np.ndarray:
        return lattice_adjacency(*self.shape)

    @cached_property
    def neighbor_counts(self) -> np.ndarray:
        deg = self.adjacency.sum(axis=1)
        return np.maximum(deg, 1.0)

    def with_rho(self, rho: float) -> "CarStructure":
        return CarStructure(self.shape, rho)


def car_precision(structure: CarStructure) -> np.ndarray:
    """Precision matrix Q = M - rho*E; symmetric positive definite for rho < 1."""
    return np.diag(structure.neighbor_counts) - structure.rho * structure.adjacency


def chol_logdet(matrix) -> tuple[np.ndarray, float]:
    """Cholesky factor and log-determinant; NumericalError when not PD."""
    try:
        chol = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("matrix is not positive definite") from exc
    return chol, 2.0 * float(np.sum(np.log(np.diag(chol))))


def car_gaussian_logpdf(x, scale: float, structure: CarStructure) -> float:
    """log N(x; 0, scale * Q^{-1}) for the CAR precision Q of ``structure``."""
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    vec = np.asarray(x, dtype=float)
    q = car_precision(structure)
    if vec.ndim != 1 or vec.shape[0] != q.shape[0]:
        raise ValueError("coefficient vector length does not match the lattice")
    _, logdet = chol_logdet(q)
    n = q.shape[0]
    quad = float(vec @ q @ vec)
    return 0.5 * logdet - 0.5 * n * math.log(2.0 * math.pi * scale) - quad / (2.0 * scale)


@dataclass(frozen=True)
class HyperPriors:
    """Hyperprior constants; defaults follow the model's reference choices.

    ``halfnormal_param`` is read as the variance of the underlying normal,
    so the 99th percentile of the warp-variance prior sits at ~1.
    ``tau2`` is a fixed constant, never sampled.
    """

    ig_shape: float = 0.01
    ig_rate: float = 0.01
    halfnormal_param: float = 0.15
    beta_a: float = 10.0
    beta_b: float = 1.0
    tau2: float = 10.0

    @property
    def halfnormal_scale(self) -> float:
        return math.sqrt(self.halfnormal_param)


def invgamma_logpdf(x: float, shape: float, rate: float) -> float:
    """Inverse-Gamma(shape, rate) log-density; -inf off support."""
    if x <= 0.0:
        return -math.inf
    return shape * math.log(rate) - gammaln(shape) - (shape + 1.0) * math.log(x) - rate / x


def halfnormal_logpdf(x: float, scale: float) -> float:
    """Half-Normal log-density with ``scale`` the sd of the underlying normal."""
    if x < 0.0:
        return -math.inf
    return 0.5 * math.log(2.0 / math.pi) - math.log(scale) - 0.5 * (x / scale) ** 2


def beta_logpdf(x: float, a: float, b: float) -> float:
    """Beta(a, b) log-density on the open interval (0, 1); -inf off support."""
    if not 0.0 < x < 1.0:
        return -math.inf
    return (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - betaln(a, b)
