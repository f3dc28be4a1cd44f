"""Sublinear-expectation generator and ambiguity-set behavior."""

import numpy as np
import pytest

from gkernel import (
    InvalidSetError,
    ShapeError,
    UncertaintySet,
    ellipticity_constants,
    g_value,
    g_value_batch,
)

HALF_OPEN = UncertaintySet.interval(0.5, 1.0)


def _brute_force_1d(a: float, lo: float, hi: float, points: int = 1001) -> float:
    qs = np.linspace(lo, hi, points)
    return float(np.max(0.5 * a * qs))


class TestIntervalClosedForm:
    def test_positive_slope_picks_upper_endpoint(self):
        ev = g_value(np.array([[2.0]]), HALF_OPEN)
        assert ev.value == 1.0
        assert ev.maximizer[0, 0] == 1.0

    def test_zero_matrix_maps_to_zero(self):
        ev = g_value(np.array([[0.0]]), HALF_OPEN)
        assert ev.value == 0.0

    def test_negative_slope_picks_lower_endpoint(self):
        ev = g_value(np.array([[-2.0]]), HALF_OPEN)
        assert ev.value == -0.5
        assert ev.maximizer[0, 0] == 0.5

    def test_zero_ties_break_to_largest_trace(self):
        ev = g_value(np.array([[0.0]]), HALF_OPEN)
        assert ev.maximizer[0, 0] == 1.0

    def test_closed_form_matches_dense_scan(self):
        rng = np.random.default_rng(42)
        for a in rng.normal(scale=3.0, size=200):
            ev = g_value(np.array([[a]]), HALF_OPEN)
            assert abs(ev.value - _brute_force_1d(a, 0.5, 1.0)) <= 1e-12

    def test_value_consistent_with_maximizer(self):
        rng = np.random.default_rng(7)
        for a in rng.normal(size=50):
            ev = g_value(np.array([[a]]), HALF_OPEN)
            assert ev.value == pytest.approx(0.5 * a * ev.maximizer[0, 0], abs=1e-15)


class TestFiniteSets:
    def setup_method(self):
        self.members = [
            np.diag([0.8, 1.2]),
            np.eye(2),
            np.array([[1.0, 0.3], [0.3, 1.0]]),
        ]
        self.sigma = UncertaintySet.finite(self.members)

    def test_exhaustive_maximization(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            raw = rng.normal(size=(2, 2))
            a = raw + raw.T
            ev = g_value(a, self.sigma)
            brute = max(0.5 * np.trace(a @ q) for q in self.members)
            assert ev.value == pytest.approx(brute, abs=1e-14)
            assert any(np.allclose(ev.maximizer, q) for q in self.members)

    def test_batch_agrees_with_scalar_calls(self):
        rng = np.random.default_rng(11)
        raw = rng.normal(size=(40, 2, 2))
        mats = raw + np.swapaxes(raw, 1, 2)
        values, argmax = g_value_batch(mats, self.sigma)
        for i in range(40):
            ev = g_value(mats[i], self.sigma)
            assert values[i] == pytest.approx(ev.value, abs=1e-15)
            assert np.allclose(argmax[i], ev.maximizer)

    def test_membership(self):
        assert self.sigma.contains(np.eye(2))
        assert not self.sigma.contains(np.diag([0.9, 0.9]))
        assert HALF_OPEN.contains(np.array([[0.75]]))
        assert not HALF_OPEN.contains(np.array([[1.25]]))


class TestEllipticityConstants:
    def test_interval_returns_stored_bounds(self):
        assert ellipticity_constants(HALF_OPEN) == (0.5, 1.0)

    def test_identity_member(self):
        sigma = UncertaintySet.finite([np.eye(2)])
        assert ellipticity_constants(sigma) == (1.0, 1.0)

    def test_eigenvalue_extremes_across_members(self):
        sigma = UncertaintySet.finite([np.diag([0.8, 1.2]), np.diag([1.0, 1.0])])
        lo, hi = ellipticity_constants(sigma)
        assert lo == pytest.approx(0.8, abs=1e-14)
        assert hi == pytest.approx(1.2, abs=1e-14)


def _random_psd(rng, d):
    raw = rng.normal(size=(d, d))
    return raw @ raw.T


@pytest.mark.parametrize("sigma,d", [
    (HALF_OPEN, 1),
    (UncertaintySet.finite([np.diag([0.8, 1.2]), np.eye(2),
                            np.array([[1.0, 0.3], [0.3, 1.0]])]), 2),
])
class TestGeneratorProperties:
    def test_sublinearity_and_homogeneity(self, sigma, d):
        rng = np.random.default_rng(17)
        for _ in range(300):
            ra, rb = rng.normal(size=(d, d)), rng.normal(size=(d, d))
            a, b = ra + ra.T, rb + rb.T
            ga = g_value(a, sigma).value
            gb = g_value(b, sigma).value
            gab = g_value(a + b, sigma).value
            assert gab <= ga + gb + 1e-12
            c = float(rng.uniform(0.0, 5.0))
            assert g_value(c * a, sigma).value == pytest.approx(c * ga, abs=1e-11)

    def test_monotonicity_and_sandwich(self, sigma, d):
        rng = np.random.default_rng(23)
        lo, hi = ellipticity_constants(sigma)
        for _ in range(300):
            rb = rng.normal(size=(d, d))
            b = rb + rb.T
            a = b + _random_psd(rng, d)
            ga = g_value(a, sigma).value
            gb = g_value(b, sigma).value
            spread = ga - gb
            tr = float(np.trace(a - b))
            assert spread >= -1e-12
            assert 0.5 * lo * tr - 1e-12 <= spread <= 0.5 * hi * tr + 1e-12


class TestValidation:
    def test_non_symmetric_matrix_rejected(self):
        with pytest.raises(ShapeError):
            g_value(np.array([[1.0, 0.5], [0.0, 1.0]]),
                    UncertaintySet.finite([np.eye(2)]))

    def test_interval_needs_positive_lower_bound(self):
        with pytest.raises(InvalidSetError):
            UncertaintySet.interval(0.0, 1.0)
        with pytest.raises(InvalidSetError):
            UncertaintySet.interval(-0.5, 1.0)

    def test_interval_ordering(self):
        with pytest.raises(InvalidSetError):
            UncertaintySet.interval(1.0, 0.5)

    def test_finite_set_needs_positive_definite_members(self):
        with pytest.raises(InvalidSetError):
            UncertaintySet.finite([np.diag([1.0, 0.0])])
        with pytest.raises(InvalidSetError):
            UncertaintySet.finite([np.array([[1.0, 2.0], [2.0, 1.0]])])

    def test_finite_set_must_be_nonempty(self):
        with pytest.raises(InvalidSetError):
            UncertaintySet.finite([])

    def test_degenerate_flag(self):
        assert UncertaintySet.interval(1.0, 1.0).degenerate
        assert not HALF_OPEN.degenerate
        assert UncertaintySet.finite([np.eye(2)]).degenerate

    def test_wrong_dimension_matrix(self):
        with pytest.raises(ShapeError):
            g_value(np.eye(2), HALF_OPEN)
