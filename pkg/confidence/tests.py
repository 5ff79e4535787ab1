import math
import unittest

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from model_selection.criteria import theta_dimension
from rhlp.core import Dataset, RhlpParams, polynomial_basis, regression_mean
from rhlp.em import FitConfig, fit
from simulation.scenarios import generate, true_curve

from .bands import (
    CurveUncertainty, chi_square_quantile, confidence_band, f_gradient, fisher_information,
    observation_scores, pointwise_variance,
)


def random_params(rng, K=3, p=2):
    w = rng.normal(size=(K, 2))
    w[-1] = 0.0
    return RhlpParams(w=w, beta=rng.normal(size=(K, p + 1)), sigma2=float(rng.uniform(0.3, 1.5)))


def ols_params(t, x, p):
    design = polynomial_basis(t, p)
    beta = np.linalg.lstsq(design, x, rcond=None)[0]
    sigma2 = float(np.mean((x - design @ beta) ** 2))
    return RhlpParams(w=np.zeros((1, 2)), beta=beta[None, :], sigma2=sigma2)


class ChiSquareQuantileTests(SimpleTestCase):

    def test_two_degrees_of_freedom_closed_form(self):
        # CDF of chi2(2) at x is 1 - exp(-x/2)
        self.assertAlmostEqual(chi_square_quantile(2, 1.0 - math.exp(-1.0)), 2.0, delta=1e-9)

    def test_known_value(self):
        self.assertAlmostEqual(chi_square_quantile(1, 0.95), 3.841458820694124, delta=1e-8)

    def test_large_dof_brackets_itself(self):
        q = chi_square_quantile(40, 0.99)
        self.assertGreater(q, 40)
        self.assertAlmostEqual(q, 63.6907, delta=1e-3)

    def test_nineteen_degrees_of_freedom(self):
        self.assertAlmostEqual(chi_square_quantile(19, 0.95), 30.14352720564616, delta=1e-8)

    def test_increasing_in_probability_and_dof(self):
        probs = [0.01, 0.1, 0.5, 0.9, 0.95, 0.99, 0.999]
        for dof in (1, 2, 5, 8, 18, 40):
            values = [chi_square_quantile(dof, prob) for prob in probs]
            self.assertTrue(all(a < b for a, b in zip(values, values[1:])))
        for prob in probs:
            values = [chi_square_quantile(dof, prob) for dof in range(1, 30)]
            self.assertTrue(all(a < b for a, b in zip(values, values[1:])))

    def test_rejects_bad_arguments(self):
        with self.assertRaises(ValueError):
            chi_square_quantile(0, 0.5)
        with self.assertRaises(ValueError):
            chi_square_quantile(3, 1.0)


class GradientTests(SimpleTestCase):

    def test_f_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            K, p = int(rng.integers(1, 5)), int(rng.integers(0, 4))
            params = random_params(rng, K, p)
            t = float(rng.uniform(0, 1))
            phi = params.to_vector()
            analytic = f_gradient(t, params)
            numeric = np.empty_like(phi)
            for j in range(phi.size):
                h = 1e-6 * (1.0 + abs(phi[j]))
                up, down = phi.copy(), phi.copy()
                up[j] += h
                down[j] -= h
                numeric[j] = (
                    regression_mean(t, RhlpParams.from_vector(up, K, p))
                    - regression_mean(t, RhlpParams.from_vector(down, K, p))
                ) / (up[j] - down[j])
            self.assertLess(np.linalg.norm(analytic - numeric) / np.linalg.norm(analytic), 1e-6)
            self.assertEqual(analytic[-1], 0.0)

    def test_equal_components_give_no_gate_sensitivity(self):
        rng = np.random.default_rng(26)
        for _ in range(20):
            K, p = int(rng.integers(2, 5)), int(rng.integers(0, 4))
            w = rng.normal(size=(K, 2))
            w[-1] = 0.0
            params = RhlpParams(w=w, beta=np.tile(rng.normal(size=p + 1), (K, 1)), sigma2=1.0)
            t = float(rng.uniform(0, 1))
            gradient = f_gradient(t, params)
            n_beta = K * (p + 1)
            np.testing.assert_allclose(gradient[n_beta:n_beta + 2 * (K - 1)], 0.0, atol=1e-12)

    def test_vectorized_gradient_matches_scalar(self):
        params = random_params(np.random.default_rng(22))
        ts = np.array([0.1, 0.4, 0.9])
        matrix = f_gradient(ts, params)
        for i, t in enumerate(ts):
            np.testing.assert_allclose(matrix[i], f_gradient(float(t), params), atol=1e-15)


class InformationTests(SimpleTestCase):

    def test_information_is_symmetric_outer_product(self):
        rng = np.random.default_rng(23)
        params = random_params(rng)
        data = Dataset(rng.uniform(0, 1, 40), rng.normal(size=40))
        scores = observation_scores(data, params)
        information = fisher_information(data, params)
        self.assertEqual(scores.shape, (40, params.to_vector().size))
        np.testing.assert_allclose(information, information.T)
        np.testing.assert_allclose(information, scores.T @ scores, rtol=1e-12, atol=1e-12)

    def test_single_component_variance_matches_least_squares(self):
        rng = np.random.default_rng(24)
        t = np.linspace(0, 1, 4000)
        x = 1.0 - 2.0 * t + 3.0 * t ** 2 + 0.5 * rng.standard_normal(t.size)
        params = ols_params(t, x, 2)
        data = Dataset(t, x)
        design = polynomial_basis(t, 2)
        covariance = params.sigma2 * np.linalg.inv(design.T @ design)
        uncertainty = CurveUncertainty(data, params)
        for point in (0.0, 0.3, 0.7, 1.0):
            basis = polynomial_basis(point, 2)
            expected = basis @ covariance @ basis
            self.assertAlmostEqual(pointwise_variance(point, data, params, uncertainty) / expected, 1.0, delta=0.15)

    def test_single_component_information_matches_closed_form(self):
        rng = np.random.default_rng(27)
        t = np.linspace(0, 1, 20000)
        beta, sigma2 = np.array([0.5, -1.0]), 0.64
        design = polynomial_basis(t, 1)
        x = design @ beta + math.sqrt(sigma2) * rng.standard_normal(t.size)
        params = RhlpParams(w=np.zeros((1, 2)), beta=beta[None, :], sigma2=sigma2)
        information = fisher_information(Dataset(t, x), params)
        expected = design.T @ design / sigma2
        self.assertLess(np.linalg.norm(information[:2, :2] - expected) / np.linalg.norm(expected), 0.05)
        self.assertAlmostEqual(information[2, 2] / (t.size / (2 * sigma2 ** 2)), 1.0, delta=0.1)

    def test_duplicating_observations_doubles_information(self):
        rng = np.random.default_rng(28)
        t = rng.uniform(0, 1, 50)
        x = np.cos(2 * t) + 0.3 * rng.standard_normal(50)
        params = random_params(rng, K=3, p=1)
        single = fisher_information(Dataset(t, x), params)
        double = fisher_information(Dataset(np.tile(t, 2), np.tile(x, 2)), params)
        np.testing.assert_allclose(double, 2.0 * single, rtol=1e-9, atol=1e-9)

    def test_duplicating_observations_halves_variance(self):
        rng = np.random.default_rng(25)
        t = rng.uniform(0, 1, 60)
        x = np.sin(3 * t) + 0.2 * rng.standard_normal(60)
        params = random_params(rng, K=2, p=1)
        single = pointwise_variance(np.array([0.2, 0.5]), Dataset(t, x), params)
        double = pointwise_variance(np.array([0.2, 0.5]), Dataset(np.tile(t, 2), np.tile(x, 2)), params)
        np.testing.assert_allclose(double / single, 0.5, rtol=1e-6)


class BandTests(SimpleTestCase):

    def setUp(self):
        data, _ = generate(2, 120, 1.0, seed=5)
        self.data = data
        self.result = fit(data, 2, 2, FitConfig(n_starts=2, seed=1))

    def test_band_is_centered_on_curve(self):
        grid = np.linspace(0, 5, 25)
        band = confidence_band(grid, self.data, self.result.params, alpha=0.05)
        np.testing.assert_allclose(band.center, regression_mean(grid, self.result.params))
        np.testing.assert_allclose(band.upper - band.center, band.center - band.lower, atol=1e-9)
        self.assertTrue(np.all(band.lower <= band.upper))
        self.assertEqual(band.dof, theta_dimension(2, 2))

    def test_narrower_confidence_gives_narrower_band(self):
        grid = np.linspace(0, 5, 10)
        uncertainty = CurveUncertainty(self.data, self.result.params)
        wide = confidence_band(grid, self.data, self.result.params, 0.01, uncertainty)
        narrow = confidence_band(grid, self.data, self.result.params, 0.2, uncertainty)
        self.assertTrue(np.all(narrow.half_width <= wide.half_width))

    def test_band_collapses_as_confidence_vanishes(self):
        grid = np.linspace(0, 5, 10)
        uncertainty = CurveUncertainty(self.data, self.result.params)
        widths = [
            confidence_band(grid, self.data, self.result.params, alpha, uncertainty).half_width.max()
            for alpha in (0.05, 0.5, 0.9, 0.999, 1.0 - 1e-15)
        ]
        self.assertTrue(all(a > b for a, b in zip(widths, widths[1:])))
        self.assertLess(widths[-1], 0.01 * widths[0])


@unittest.skipUnless(settings.RHLP_SLOW_TESTS, 'set RHLP_SLOW_TESTS=True to run')
class CoverageAcceptanceTests(SimpleTestCase):

    def test_pointwise_coverage_near_nominal(self):
        grid = np.linspace(0.0, 5.0, 51)
        truth = true_curve(2, grid)
        covered = []
        for replicate in range(100):
            data, _ = generate(2, 500, 1.5, seed=1000 + replicate)
            result = fit(data, 2, 2, FitConfig(n_starts=3, seed=replicate))
            band = confidence_band(grid, data, result.params, alpha=0.05)
            covered.append((band.lower <= truth) & (truth <= band.upper))
        coverage = float(np.mean(covered))
        self.assertGreaterEqual(coverage, 0.85)
        self.assertLessEqual(coverage, 0.99)
