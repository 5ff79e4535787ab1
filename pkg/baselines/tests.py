import itertools
import math

import numpy as np
from django.test import SimpleTestCase

from rhlp.core import Dataset, polynomial_basis
from rhlp.em import FitConfig, fit
from rhlp.exceptions import TooFewPoints
from simulation.scenarios import generate

from .hmm import (
    HmmRegParams, emission_log_densities, filtering_probabilities, fit_hmm_regression,
    forward_backward, hmm_filter_predict, hmm_log_likelihood, initial_chain,
)
from .piecewise import fit_piecewise_dp, piecewise_predict

FAST = FitConfig(n_starts=2, em_max_iter=200)


def segment_sse(t, x, p):
    design = polynomial_basis(t, p)
    beta = np.linalg.lstsq(design, x, rcond=None)[0]
    return float(np.sum((x - design @ beta) ** 2))


def brute_force_sse(t, x, K, p):
    n, min_size = t.size, p + 2
    best = math.inf
    for cuts in itertools.combinations(range(min_size, n - min_size + 1), K - 1):
        edges = (0,) + cuts + (n,)
        if any(b - a < min_size for a, b in zip(edges, edges[1:])):
            continue
        total = sum(segment_sse(t[a:b], x[a:b], p) for a, b in zip(edges, edges[1:]))
        best = min(best, total)
    return best


class PiecewiseTests(SimpleTestCase):

    def test_single_segment_is_ordinary_least_squares(self):
        rng = np.random.default_rng(0)
        t = np.linspace(0, 1, 30)
        x = rng.normal(size=30)
        result = fit_piecewise_dp(Dataset(t, x), 1, 2)
        self.assertEqual(result.boundaries, ())
        np.testing.assert_allclose(result.beta[0], np.polynomial.polynomial.polyfit(t, x, 2), atol=1e-9)

    def test_recovers_noiseless_switch(self):
        data, truth = generate(2, 101, 0.0, seed=0)
        result = fit_piecewise_dp(data, 2, 2)
        self.assertEqual(result.boundaries, (51,))
        self.assertLessEqual(data.t[50], 2.5)
        self.assertGreater(data.t[51], 2.5)
        np.testing.assert_allclose(result.beta, [[33, -20, 4], [-78, 47, -5]], atol=1e-6)
        self.assertLess(result.sse, 1e-12)

    def test_matches_exhaustive_enumeration(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            n = int(rng.integers(10, 21))
            K = int(rng.integers(1, 4))
            p = int(rng.integers(0, 3))
            if n < K * (p + 2):
                continue
            t = np.sort(rng.uniform(0, 1, n))
            x = rng.normal(size=n)
            result = fit_piecewise_dp(Dataset(t, x), K, p)
            self.assertAlmostEqual(result.sse, brute_force_sse(t, x, K, p), delta=1e-8)

    def test_sse_nonincreasing_in_segments(self):
        rng = np.random.default_rng(2)
        t = np.linspace(0, 1, 40)
        data = Dataset(t, np.sin(6 * t) + 0.1 * rng.standard_normal(40))
        sse = [fit_piecewise_dp(data, K, 1).sse for K in range(1, 6)]
        for fewer, more in zip(sse, sse[1:]):
            self.assertLessEqual(more, fewer + 1e-9)

    def test_boundary_point_belongs_to_right_segment(self):
        data, _ = generate(2, 101, 0.5, seed=3)
        result = fit_piecewise_dp(data, 2, 2)
        boundary = result.boundaries[0]
        expected = float(polynomial_basis(data.t[boundary], 2) @ result.beta[1])
        self.assertAlmostEqual(piecewise_predict(result, boundary), expected, places=10)
        self.assertEqual(result.labels[boundary], 1)
        self.assertEqual(result.labels[boundary - 1], 0)

    def test_predictions_reproduce_sse(self):
        data, _ = generate(3, 80, 1.0, seed=4)
        result = fit_piecewise_dp(data, 3, 1)
        predictions = np.array([piecewise_predict(result, i) for i in range(data.n)])
        np.testing.assert_allclose(predictions, result.fitted, atol=1e-9)
        self.assertAlmostEqual(float(np.sum((data.x - predictions) ** 2)), result.sse, delta=1e-8)

    def test_segments_hold_minimum_points(self):
        data, _ = generate(3, 60, 1.0, seed=5)
        result = fit_piecewise_dp(data, 4, 2)
        self.assertTrue(all(b - a >= 4 for a, b in zip(result.edges, result.edges[1:])))

    def test_too_few_points(self):
        with self.assertRaises(TooFewPoints):
            fit_piecewise_dp(Dataset(np.arange(7.0), np.zeros(7)), 2, 2)


def small_hmm():
    return HmmRegParams(
        initial=[0.6, 0.4],
        trans=[[0.8, 0.2], [0.3, 0.7]],
        beta=[[0.0, 1.0], [2.0, -1.0]],
        sigma2=0.5,
    )


class HmmTests(SimpleTestCase):

    def test_forward_likelihood_matches_path_enumeration(self):
        params = small_hmm()
        rng = np.random.default_rng(6)
        data = Dataset(np.linspace(0, 2, 7), rng.normal(1.0, 1.0, 7))
        emissions = np.exp(emission_log_densities(data, params))
        total = 0.0
        for path in itertools.product(range(2), repeat=data.n):
            probability = params.initial[path[0]] * emissions[0, path[0]]
            for i in range(1, data.n):
                probability *= params.trans[path[i - 1], path[i]] * emissions[i, path[i]]
            total += probability
        self.assertAlmostEqual(hmm_log_likelihood(data, params), math.log(total), delta=1e-10)

    def test_first_filter_step_is_bayes_rule(self):
        params = small_hmm()
        data = Dataset([0.0, 1.0, 2.0], [0.3, 0.5, -0.2])
        emissions = np.exp(emission_log_densities(data, params))
        joint = params.initial * emissions[0]
        np.testing.assert_allclose(filtering_probabilities(data, params)[0], joint / joint.sum(), atol=1e-12)

    def test_identical_emissions_follow_the_chain(self):
        params = HmmRegParams(
            initial=[0.6, 0.4], trans=[[0.8, 0.2], [0.3, 0.7]], beta=[[1.0, 0.5], [1.0, 0.5]], sigma2=1.0,
        )
        data = Dataset(np.linspace(0, 1, 6), np.linspace(-1, 1, 6))
        filtered = filtering_probabilities(data, params)
        law = np.array(params.initial)
        for i in range(data.n):
            np.testing.assert_allclose(filtered[i], law, atol=1e-12)
            law = law @ params.trans

    def test_posteriors_are_normalized(self):
        data, _ = generate(2, 50, 1.0, seed=7)
        params = HmmRegParams(*initial_chain(2), beta=[[33, -20, 4], [-78, 47, -5]], sigma2=1.0)
        gamma, transitions, _ = forward_backward(data, params)
        np.testing.assert_allclose(gamma.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(filtering_probabilities(data, params).sum(axis=1), 1.0, atol=1e-12)
        self.assertAlmostEqual(transitions.sum(), data.n - 1, delta=1e-8)

    def test_single_state_is_least_squares(self):
        data, _ = generate(3, 60, 1.0, seed=8)
        result = fit_hmm_regression(data, 1, 3, FAST)
        design = polynomial_basis(data.t, 3)
        ols = np.linalg.lstsq(design, data.x, rcond=None)[0]
        np.testing.assert_allclose(result.params.beta[0], ols, rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(hmm_filter_predict(data, result.params), design @ ols, atol=1e-8)

    def test_baum_welch_never_decreases_likelihood(self):
        for run in range(50):
            K = (2, 4, 5)[run % 3]
            data, _ = generate(1 + run % 3, 120, 1.0, seed=run)
            result = fit_hmm_regression(data, K, 2, FitConfig(n_starts=1, em_max_iter=100, seed=run))
            trace = np.array(result.loglik_trace)
            for previous, current in zip(trace[:-1], trace[1:]):
                self.assertGreaterEqual(current, previous - 1e-10)
            np.testing.assert_allclose(result.params.trans.sum(axis=1), 1.0, atol=1e-12)

    def test_left_to_right_keeps_forbidden_transitions_at_zero(self):
        data, _ = generate(2, 120, 1.0, seed=10)
        result = fit_hmm_regression(data, 2, 2, FAST, left_to_right=True)
        self.assertEqual(result.params.trans[1, 0], 0.0)

    def test_rejects_non_stochastic_matrix(self):
        with self.assertRaises(ValueError):
            HmmRegParams(initial=[0.5, 0.5], trans=[[0.5, 0.6], [0.5, 0.5]], beta=[[0.0], [1.0]], sigma2=1.0)


class SingleComponentAgreementTests(SimpleTestCase):

    def test_all_methods_reduce_to_least_squares(self):
        data, _ = generate(1, 80, 1.5, seed=11)
        rhlp = fit(data, 1, 2, FAST)
        piecewise = fit_piecewise_dp(data, 1, 2)
        hmm = fit_hmm_regression(data, 1, 2, FAST)
        np.testing.assert_allclose(rhlp.fitted, piecewise.fitted, atol=1e-8)
        np.testing.assert_allclose(hmm.fitted, piecewise.fitted, atol=1e-8)
