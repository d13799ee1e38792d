"""Regular grids, unit-square coordinates and cubic B-spline bases.

All model math lives on the unit square [0,1]^2.  Geographic coordinates
exist only at the I/O boundary, where a grid's bounding box is mapped
affinely onto the unit square.  Points are numpy arrays whose last axis
has length 2 and holds (x, y) = (s1, s2).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, DataError


@dataclass(frozen=True)
class Grid:
    """Regular 2D grid of cells covering a rectangular bounding box.

    nx, ny are cell counts along x and y; cell centers are equally spaced
    on the unit square at ((j+0.5)/nx, (i+0.5)/ny).
    """

    nx: int
    ny: int
    bbox: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ConfigurationError(f"grid needs >= 2 cells per axis, got {self.nx}x{self.ny}")
        xmin, xmax, ymin, ymax = self.bbox
        if not (xmax > xmin and ymax > ymin):
            raise ConfigurationError(f"degenerate bounding box {self.bbox}")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def centers_unit(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates on the unit square, one array per axis (x, y)."""
        cx = (np.arange(self.nx) + 0.5) / self.nx
        cy = (np.arange(self.ny) + 0.5) / self.ny
        return cx, cy

    def cell_center(self, row, col) -> np.ndarray:
        """Unit-square (x, y) center of cell (row, col); accepts arrays."""
        row = np.asarray(row)
        col = np.asarray(col)
        return np.stack([(col + 0.5) / self.nx, (row + 0.5) / self.ny], axis=-1)


def normalize(grid: Grid, points) -> np.ndarray:
    """Map raw bbox coordinates onto the unit square, clamping outside points."""
    pts = np.asarray(points, dtype=float)
    xmin, xmax, ymin, ymax = grid.bbox
    out = np.empty_like(pts)
    out[..., 0] = (pts[..., 0] - xmin) / (xmax - xmin)
    out[..., 1] = (pts[..., 1] - ymin) / (ymax - ymin)
    return np.clip(out, 0.0, 1.0)


def denormalize(grid: Grid, points) -> np.ndarray:
    """Inverse of :func:`normalize` on the unit square (no clamping)."""
    pts = np.asarray(points, dtype=float)
    xmin, xmax, ymin, ymax = grid.bbox
    out = np.empty_like(pts)
    out[..., 0] = xmin + pts[..., 0] * (xmax - xmin)
    out[..., 1] = ymin + pts[..., 1] * (ymax - ymin)
    return out


def _axis_cell(coord, n_cells):
    # Centers sit at (k+0.5)/n; equidistant points (integer u) resolve to
    # the lower cell index.
    u = np.asarray(coord, dtype=float) * n_cells
    idx = np.floor(u).astype(int)
    tie = (u == idx) & (idx >= 1)
    idx = np.where(tie, idx - 1, idx)
    return np.clip(idx, 0, n_cells - 1)


def nearest_cell(grid: Grid, points) -> tuple[np.ndarray, np.ndarray]:
    """(row, col) of the grid cell whose center is closest to each unit point.

    Ties break toward the lower row index, then the lower column index.
    """
    pts = np.asarray(points, dtype=float)
    return _axis_cell(pts[..., 1], grid.ny), _axis_cell(pts[..., 0], grid.nx)


@dataclass(frozen=True)
class BSplineBasis:
    """Cubic B-spline basis on [0,1] with an open (clamped) uniform knot vector.

    ``n_basis`` is the number of basis functions; endpoint interpolation
    holds, so the first/last function equals 1 at x=0 / x=1.
    """

    n_basis: int
    degree: int = 3

    def __post_init__(self):
        if self.degree != 3:
            raise ConfigurationError("only cubic (degree 3) bases are supported")
        if self.n_basis < self.degree + 1:
            raise ConfigurationError(f"need at least {self.degree + 1} basis functions, got {self.n_basis}")

    @cached_property
    def knots(self) -> np.ndarray:
        interior = np.linspace(0.0, 1.0, self.n_basis - self.degree + 1)
        return np.concatenate([np.zeros(self.degree), interior, np.ones(self.degree)])


def bspline_eval(basis: BSplineBasis, x) -> np.ndarray:
    """Evaluate all basis functions at x in [0,1].

    Returns an array of shape ``x.shape + (n_basis,)``; at most degree+1
    entries per point are nonzero and each row sums to 1.
    """
    x = np.asarray(x, dtype=float)
    if np.any((x < 0.0) | (x > 1.0)):
        raise ValueError("B-spline argument outside [0, 1]")
    t = basis.knots
    k = basis.degree
    n = basis.n_basis
    # Knot span index mu with t[mu] <= x < t[mu+1], clamped so the span is
    # never empty (x = 1 falls in the last nonzero span).
    mu = np.clip(np.searchsorted(t, x, side="right") - 1, k, n - 1)

    # Cox-de Boor triangular scheme, vectorized over evaluation points.
    shape = x.shape
    vals = np.zeros(shape + (k + 1,))
    vals[..., 0] = 1.0
    left = np.zeros(shape + (k + 1,))
    right = np.zeros(shape + (k + 1,))
    for d in range(1, k + 1):
        left[..., d] = x - t[mu + 1 - d]
        right[..., d] = t[mu + d] - x
        saved = np.zeros(shape)
        for r in range(d):
            denom = right[..., r + 1] + left[..., d - r]
            temp = vals[..., r] / denom
            vals[..., r] = saved + right[..., r + 1] * temp
            saved = left[..., d - r] * temp
        vals[..., d] = saved

    out = np.zeros(shape + (n,))
    cols = mu[..., None] + np.arange(-k, 1)
    np.put_along_axis(out, cols, vals, axis=-1)
    return out


def tensor_eval(basis_x: BSplineBasis, basis_y: BSplineBasis, points) -> np.ndarray:
    """Tensor-product basis values A_j(s1) * B_k(s2) at unit-square points.

    Returns shape ``points.shape[:-1] + (Jx, Jy)``.
    """
    pts = np.asarray(points, dtype=float)
    ax = bspline_eval(basis_x, pts[..., 0])
    ay = bspline_eval(basis_y, pts[..., 1])
    return ax[..., :, None] * ay[..., None, :]


def tensor_rows(basis_x: BSplineBasis, basis_y: BSplineBasis, points) -> np.ndarray:
    """Tensor-product basis flattened row-major (j outer, k inner) per point."""
    tb = tensor_eval(basis_x, basis_y, points)
    return tb.reshape(tb.shape[:-2] + (basis_x.n_basis * basis_y.n_basis,))


@dataclass(frozen=True)
class StationData:
    """Point observations at N stations over T time steps.

    ``values`` is (T, N) with zeros in missing slots; ``missing`` is the
    (T, N) boolean flag array.  Locations are unit-square coordinates.
    """

    ids: tuple[str, ...]
    locations: np.ndarray
    values: np.ndarray
    missing: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        miss = np.asarray(self.missing, dtype=bool)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "missing", miss)
        n = len(self.ids)
        if loc.shape != (n, 2):
            raise DataError(f"locations must be ({n}, 2), got {loc.shape}")
        if vals.ndim != 2 or vals.shape[1] != n or miss.shape != vals.shape:
            raise DataError("values/missing must be (T, n_stations) with matching shapes")
        if np.any((loc < 0.0) | (loc > 1.0)):
            raise DataError("station locations must lie in the unit square")
        if not np.all(np.isfinite(vals[~miss])):
            raise DataError("non-missing observations must be finite")

    @property
    def n_stations(self) -> int:
        return len(self.ids)

    @property
    def n_times(self) -> int:
        return self.values.shape[0]

    def restrict_times(self, times) -> "StationData":
        """Copy with every observation outside ``times`` flagged missing."""
        keep = np.zeros(self.n_times, dtype=bool)
        keep[np.asarray(times, dtype=int)] = True
        missing = self.missing | ~keep[:, None]
        values = np.where(missing, 0.0, self.values)
        return StationData(self.ids, self.locations, values, missing)
