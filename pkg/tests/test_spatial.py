"""Grids, coordinate normalization and B-spline bases."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from warpcal.errors import ConfigurationError
from warpcal.spatial import (BSplineBasis, Grid, StationData, bspline_eval,
                             denormalize, nearest_cell, normalize, tensor_eval)


def cox_de_boor(x, k, i, t):
    """Naive recursive B-spline basis function (independent oracle)."""
    if k == 0:
        if t[i] <= x < t[i + 1]:
            return 1.0
        # closed right end of the last nonzero span
        if x == t[-1] and t[i] < t[i + 1] == t[-1]:
            return 1.0
        return 0.0
    c1 = 0.0 if t[i + k] == t[i] else (x - t[i]) / (t[i + k] - t[i]) * cox_de_boor(x, k - 1, i, t)
    c2 = 0.0 if t[i + k + 1] == t[i + 1] else (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * cox_de_boor(x, k - 1, i + 1, t)
    return c1 + c2


class TestNormalize:
    def test_midpoint_maps_to_center(self):
        grid = Grid(8, 4, (0.0, 10.0, 0.0, 5.0))
        np.testing.assert_allclose(normalize(grid, (5.0, 2.5)), [0.5, 0.5])

    def test_corner_fixed(self):
        grid = Grid(8, 4, (0.0, 10.0, 0.0, 5.0))
        np.testing.assert_allclose(normalize(grid, (0.0, 0.0)), [0.0, 0.0])

    def test_outside_point_clamped(self):
        grid = Grid(8, 4, (0.0, 10.0, 0.0, 5.0))
        np.testing.assert_allclose(normalize(grid, (12.0, 2.5)), [1.0, 0.5])

    def test_degenerate_bbox_rejected(self):
        with pytest.raises(ConfigurationError):
            Grid(8, 4, (0.0, 0.0, 0.0, 5.0))

    @given(st.floats(0.01, 9.99), st.floats(0.01, 4.99))
    @settings(deadline=None)
    def test_roundtrip_identity_inside_bbox(self, x, y):
        grid = Grid(8, 4, (0.0, 10.0, 0.0, 5.0))
        back = denormalize(grid, normalize(grid, (x, y)))
        np.testing.assert_allclose(back, [x, y], atol=1e-12)


class TestBSpline:
    @pytest.mark.parametrize("n_basis", [4, 6, 10, 12])
    def test_endpoint_interpolation(self, n_basis):
        basis = BSplineBasis(n_basis)
        at0 = bspline_eval(basis, 0.0)
        at1 = bspline_eval(basis, 1.0)
        expected0 = np.zeros(n_basis)
        expected0[0] = 1.0
        np.testing.assert_array_equal(at0, expected0)
        expected1 = np.zeros(n_basis)
        expected1[-1] = 1.0
        np.testing.assert_array_equal(at1, expected1)

    def test_matches_cox_de_boor_recursion(self):
        basis = BSplineBasis(6)
        t = basis.knots
        for x in [0.37, 0.0, 1.0, 0.333, 0.99]:
            ours = bspline_eval(basis, x)
            oracle = [cox_de_boor(x, 3, i, t) for i in range(6)]
            np.testing.assert_allclose(ours, oracle, atol=1e-12)

    def test_partition_of_unity(self):
        rng = np.random.default_rng(0)
        xs = rng.uniform(0.0, 1.0, size=1000)
        for n_basis in (4, 6, 9):
            vals = bspline_eval(BSplineBasis(n_basis), xs)
            assert np.abs(vals.sum(axis=-1) - 1.0).max() < 1e-12
            assert vals.min() >= 0.0

    def test_local_support_at_most_four(self):
        rng = np.random.default_rng(1)
        vals = bspline_eval(BSplineBasis(10), rng.uniform(0, 1, 500))
        assert ((vals > 0).sum(axis=-1) <= 4).all()

    def test_domain_error_outside_unit_interval(self):
        basis = BSplineBasis(5)
        with pytest.raises(ValueError):
            bspline_eval(basis, 1.2)
        with pytest.raises(ValueError):
            bspline_eval(basis, -0.1)

    def test_too_few_basis_functions_rejected(self):
        with pytest.raises(ConfigurationError):
            BSplineBasis(3)


class TestTensorEval:
    def test_corner_origin(self):
        tb = tensor_eval(BSplineBasis(6), BSplineBasis(4), np.array([0.0, 0.0]))
        expected = np.zeros((6, 4))
        expected[0, 0] = 1.0
        np.testing.assert_array_equal(tb, expected)

    def test_corner_opposite(self):
        tb = tensor_eval(BSplineBasis(6), BSplineBasis(4), np.array([1.0, 1.0]))
        expected = np.zeros((6, 4))
        expected[-1, -1] = 1.0
        np.testing.assert_array_equal(tb, expected)

    def test_outer_product_oracle(self):
        bx, by = BSplineBasis(6), BSplineBasis(4)
        point = np.array([0.3, 0.8])
        tb = tensor_eval(bx, by, point)
        np.testing.assert_allclose(tb, np.outer(bspline_eval(bx, 0.3), bspline_eval(by, 0.8)),
                                   atol=1e-15)
        assert abs(tb.sum() - 1.0) < 1e-12

    @given(st.floats(0, 1), st.floats(0, 1))
    @settings(deadline=None)
    def test_total_mass_one(self, s1, s2):
        tb = tensor_eval(BSplineBasis(5), BSplineBasis(7), np.array([s1, s2]))
        assert abs(tb.sum() - 1.0) < 1e-12


class TestNearestCell:
    def test_cell_center_maps_to_itself(self):
        grid = Grid(10, 5)
        row, col = nearest_cell(grid, grid.cell_center(3, 7))
        assert (row, col) == (3, 7)

    def test_origin_belongs_to_first_cell(self):
        grid = Grid(10, 5)
        assert nearest_cell(grid, np.array([0.0, 0.0])) == (0, 0)

    def test_equidistant_point_takes_lower_index(self):
        grid = Grid(10, 5)
        # x = 0.5 sits exactly between the centers of columns 4 and 5
        row, col = nearest_cell(grid, np.array([0.5, 0.1]))
        assert col == 4

    def test_idempotent_under_small_perturbation(self):
        grid = Grid(12, 9)
        rng = np.random.default_rng(2)
        pts = grid.cell_center(rng.integers(0, 9, 50), rng.integers(0, 12, 50))
        eps = rng.uniform(-0.4, 0.4, size=pts.shape) * [1.0 / 12, 1.0 / 9]
        r0, c0 = nearest_cell(grid, pts)
        r1, c1 = nearest_cell(grid, pts + eps)
        np.testing.assert_array_equal(r0, r1)
        np.testing.assert_array_equal(c0, c1)


class TestStationData:
    def test_restrict_times_masks_everything_else(self):
        stations = StationData(("a", "b"), np.array([[0.1, 0.2], [0.5, 0.6]]),
                               np.arange(6.0).reshape(3, 2), np.zeros((3, 2), dtype=bool))
        train = stations.restrict_times([0, 1])
        assert train.missing[2].all()
        assert not train.missing[:2].any()

    def test_location_out_of_unit_square_rejected(self):
        with pytest.raises(Exception):
            StationData(("a",), np.array([[1.5, 0.2]]), np.zeros((2, 1)),
                        np.zeros((2, 1), dtype=bool))

    def test_nonfinite_observation_rejected(self):
        with pytest.raises(Exception):
            StationData(("a",), np.array([[0.5, 0.2]]), np.array([[np.inf], [0.0]]),
                        np.zeros((2, 1), dtype=bool))
