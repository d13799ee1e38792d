"""Spline warp fields, reference warps, and significance flags."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from warpcal.errors import ConfigurationError
from warpcal.spatial import BSplineBasis, tensor_eval
from warpcal.warp import (AnalyticWarp, WarpField, apply_warp, displacement,
                          displacement_significance, eval_analytic, eval_warp,
                          fit_warp_field)


def dense_points(n=9):
    u = np.linspace(0.0, 1.0, n)
    return np.stack(np.meshgrid(u, u, indexing="ij"), axis=-1).reshape(-1, 2)


class TestWarpField:
    def test_zero_coefficients_give_identity(self):
        field = WarpField.zero(BSplineBasis(6), BSplineBasis(4))
        pts = dense_points(17)
        np.testing.assert_array_equal(eval_warp(field, pts), pts)

    def test_corner_coefficient_moves_corner(self):
        coeffs = np.zeros((6, 4, 2))
        coeffs[0, 0, 0] = 0.2
        field = WarpField(BSplineBasis(6), BSplineBasis(4), coeffs)
        np.testing.assert_allclose(eval_warp(field, np.array([0.0, 0.0])), [0.2, 0.0])

    def test_double_sum_oracle(self):
        rng = np.random.default_rng(3)
        bx, by = BSplineBasis(6), BSplineBasis(4)
        coeffs = rng.normal(0, 0.05, size=(6, 4, 2))
        field = WarpField(bx, by, coeffs)
        s = np.array([0.4, 0.7])
        tb = tensor_eval(bx, by, s)
        expected = np.zeros(2)
        for j in range(6):
            for k in range(4):
                expected += tb[j, k] * coeffs[j, k]
        np.testing.assert_allclose(displacement(field, s), expected, atol=1e-14)

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(-5, 5))
    @settings(deadline=None, max_examples=50)
    def test_output_stays_in_unit_square(self, s1, s2, magnitude):
        coeffs = np.full((4, 4, 2), magnitude)
        field = WarpField(BSplineBasis(4), BSplineBasis(4), coeffs)
        out = eval_warp(field, np.array([s1, s2]))
        assert (out >= 0.0).all() and (out <= 1.0).all()

    def test_displacement_linear_in_coefficients(self):
        rng = np.random.default_rng(4)
        bx, by = BSplineBasis(5), BSplineBasis(5)
        c1 = rng.normal(0, 0.02, size=(5, 5, 2))
        c2 = rng.normal(0, 0.02, size=(5, 5, 2))
        pts = rng.uniform(0.2, 0.8, size=(20, 2))
        d1 = displacement(WarpField(bx, by, c1), pts)
        d2 = displacement(WarpField(bx, by, c2), pts)
        d12 = displacement(WarpField(bx, by, c1 + c2), pts)
        np.testing.assert_allclose(d12, d1 + d2, atol=1e-13)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ConfigurationError):
            WarpField(BSplineBasis(6), BSplineBasis(4), np.zeros((4, 6, 2)))


class TestAnalyticWarp:
    def test_translation_from_center(self):
        warp = AnalyticWarp.translation(0.16, 0.16)
        np.testing.assert_allclose(eval_analytic(warp, np.array([0.5, 0.5])), [0.66, 0.66])

    def test_diffeomorphism_fixes_origin(self):
        warp = AnalyticWarp.diffeomorphism(0.1, 0.5)
        np.testing.assert_allclose(eval_analytic(warp, np.array([0.0, 0.0])), [0.0, 0.0])

    def test_diffeomorphism_fixes_opposite_corner(self):
        warp = AnalyticWarp.diffeomorphism(0.1, 0.5)
        np.testing.assert_allclose(eval_analytic(warp, np.array([1.0, 1.0])), [1.0, 1.0],
                                   atol=1e-15)

    def test_diffeomorphism_preserves_boundary(self):
        warp = AnalyticWarp.diffeomorphism(0.1, 0.5)
        rng = np.random.default_rng(5)
        t = rng.uniform(0, 1, 100)
        edges = np.concatenate([
            np.stack([np.zeros(25), t[:25]], axis=-1),
            np.stack([t[25:50], np.zeros(25)], axis=-1),
            np.stack([np.ones(25), t[50:75]], axis=-1),
            np.stack([t[75:], np.ones(25)], axis=-1),
        ])
        out = eval_analytic(warp, edges)
        assert np.abs(out - edges).max() < 1e-12

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigurationError):
            AnalyticWarp("swirl")


class TestApplyWarp:
    def test_identity_on_station_set(self):
        pts = dense_points(5)
        np.testing.assert_array_equal(apply_warp(AnalyticWarp.identity(), pts), pts)

    def test_translation_clamps_at_boundary(self):
        out = apply_warp(AnalyticWarp.translation(0.16, 0.16), np.array([[0.9, 0.9]]))
        np.testing.assert_allclose(out, [[1.0, 1.0]])

    def test_fitted_field_matches_translation(self):
        warp = AnalyticWarp.translation(0.16, 0.16)
        field = fit_warp_field(warp, BSplineBasis(6), BSplineBasis(4))
        pts = np.array([[0.3, 0.4], [0.5, 0.5], [0.7, 0.2], [0.42, 0.61]])
        np.testing.assert_allclose(eval_warp(field, pts), eval_analytic(warp, pts), atol=1e-6)

    def test_not_a_warp_rejected(self):
        with pytest.raises(ConfigurationError):
            apply_warp("north by 3 cells", dense_points(3))


class TestDisplacementSignificance:
    def test_all_zero_draws_not_significant(self):
        draws = np.zeros((50, 2))
        per_coord, overall = displacement_significance(draws)
        assert not per_coord.any() and not overall

    def test_positive_interval_significant(self):
        rng = np.random.default_rng(6)
        draws = np.stack([rng.uniform(0.1, 0.2, 200), rng.normal(0, 1, 200)], axis=-1)
        per_coord, overall = displacement_significance(draws)
        assert per_coord[0] and not per_coord[1]
        assert overall

    def test_symmetric_wide_draws_not_significant(self):
        rng = np.random.default_rng(7)
        draws = rng.normal(0, 1, size=(500, 2))
        _, overall = displacement_significance(draws)
        assert not overall

    def test_empty_draws_rejected(self):
        with pytest.raises(ValueError):
            displacement_significance(np.zeros((0, 2)))

    def test_vectorized_over_locations(self):
        rng = np.random.default_rng(8)
        draws = np.zeros((300, 2, 2))
        draws[:, 0, 0] = rng.uniform(0.05, 0.1, 300)
        draws[:, 1, :] = rng.normal(0, 1, (300, 2))
        per_coord, overall = displacement_significance(draws)
        assert per_coord.shape == (2, 2)
        assert overall[0] and not overall[1]
