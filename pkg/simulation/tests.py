import math
import unittest

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from rhlp.em import FitConfig
from rhlp.exceptions import LengthMismatch, UnknownScenario

from .benchmark import BenchmarkRecord, bic_study, data_seed, summarize, sweep, timing_ratio
from .estimators import METHODS, compare_methods, fit_method
from .metrics import eqm
from .scenarios import SCENARIOS, generate, get_scenario, true_curve

FAST = FitConfig(n_starts=2, em_max_iter=200)


class ScenarioTests(SimpleTestCase):

    def test_reference_values(self):
        self.assertEqual(true_curve(3, 0.0), 0.0)
        self.assertAlmostEqual(true_curve(2, 0.0), 33.0)
        self.assertAlmostEqual(true_curve(2, 5.0), 32.0)
        self.assertAlmostEqual(true_curve(2, 2.5), 33 - 50 + 25.0)

    def test_fit_dimensions(self):
        self.assertEqual({i: (s.K, s.p) for i, s in SCENARIOS.items()}, {1: (4, 2), 2: (2, 2), 3: (5, 3)})

    def test_unknown_scenario(self):
        with self.assertRaises(UnknownScenario):
            get_scenario(4)

    def test_noiseless_sample_is_the_curve(self):
        data, truth = generate(1, 50, 0.0, seed=3)
        np.testing.assert_array_equal(data.x, truth)
        np.testing.assert_allclose(truth, true_curve(1, data.t))

    def test_endpoints_and_spacing(self):
        data, _ = generate(3, 11, 1.0, seed=0)
        self.assertEqual(data.t[0], 0.0)
        self.assertEqual(data.t[-1], 5.0)
        np.testing.assert_allclose(np.diff(data.t), 0.5)

    def test_same_seed_same_sample(self):
        first, _ = generate(2, 100, 1.5, seed=42)
        second, _ = generate(2, 100, 1.5, seed=42)
        third, _ = generate(2, 100, 1.5, seed=43)
        np.testing.assert_array_equal(first.x, second.x)
        self.assertFalse(np.array_equal(first.x, third.x))

    def test_noise_variance(self):
        data, truth = generate(2, 100_000, 2.0, seed=1)
        self.assertAlmostEqual(np.var(data.x - truth) / 4.0, 1.0, delta=0.03)

    def test_rejects_bad_arguments(self):
        with self.assertRaises(ValueError):
            generate(1, 1, 1.0, seed=0)
        with self.assertRaises(ValueError):
            generate(1, 10, -1.0, seed=0)


class EqmTests(SimpleTestCase):

    def test_identical_sequences(self):
        self.assertEqual(eqm([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]), 0.0)

    def test_constant_offset(self):
        values = np.linspace(-3, 3, 17)
        self.assertAlmostEqual(eqm(values, values + 0.7), 0.49)

    def test_matches_loop(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=40), rng.normal(size=40)
        expected = sum((x - y) ** 2 for x, y in zip(a, b)) / 40
        self.assertAlmostEqual(eqm(a, b), expected, places=12)

    def test_length_mismatch(self):
        with self.assertRaises(LengthMismatch):
            eqm([1.0, 2.0], [1.0])
        with self.assertRaises(LengthMismatch):
            eqm([], [])


class EstimatorTests(SimpleTestCase):

    def test_compare_reports_every_method(self):
        data, _ = generate(2, 80, 1.0, seed=5)
        rows = compare_methods(data, 2, 2, FAST)
        self.assertEqual([r.method for r in rows], list(METHODS))
        for row in rows:
            self.assertTrue(math.isfinite(row.eqm))
            self.assertGreaterEqual(row.eqm, 0.0)
            self.assertGreaterEqual(row.wall_seconds, 0.0)

    def test_unknown_method(self):
        data, _ = generate(2, 40, 1.0, seed=5)
        with self.assertRaises(ValueError):
            fit_method('spline', data, 2, 2, FAST)


class BenchmarkTests(SimpleTestCase):

    def test_single_cell(self):
        records = sweep([2], [60], [1.0], ['piecewise'], 1, seed=0, config=FAST)
        self.assertEqual(len(records), 1)
        record = records[0]
        self.assertFalse(record.failed)
        self.assertEqual((record.scenario, record.method, record.n, record.sigma), (2, 'piecewise', 60, 1.0))
        self.assertGreaterEqual(record.eqm, 0.0)

    def test_record_order(self):
        records = sweep([2, 3], [40, 50], [1.0], ['piecewise', 'hmm'], 2, seed=0, config=FAST)
        keys = [(r.scenario, r.method, r.n, r.sigma, r.replicate) for r in records]
        self.assertEqual(len(keys), 16)
        self.assertEqual(keys[:3], [(2, 'piecewise', 40, 1.0, 0), (2, 'piecewise', 40, 1.0, 1), (2, 'piecewise', 50, 1.0, 0)])
        self.assertEqual(keys[-1], (3, 'hmm', 50, 1.0, 1))

    def test_thread_count_does_not_change_results(self):
        args = ([2], [60], [1.0, 2.0], ['rhlp', 'hmm'], 2)
        serial = sweep(*args, seed=7, config=FAST, threads=1)
        parallel = sweep(*args, seed=7, config=FAST, threads=3)
        self.assertEqual([(r.seed, r.eqm) for r in serial], [(r.seed, r.eqm) for r in parallel])

    def test_methods_share_the_sample(self):
        seed = data_seed(0, 2, 60, 1.0, 0)
        self.assertEqual(seed, data_seed(0, 2, 60, 1.0, 0))
        self.assertNotEqual(seed, data_seed(0, 2, 60, 1.0, 1))

    def test_failures_are_recorded(self):
        records = sweep([3], [10], [1.0], ['rhlp', 'piecewise'], 1, seed=0, config=FAST)
        self.assertTrue(all(r.failed for r in records))
        self.assertTrue(all(math.isnan(r.eqm) for r in records))
        self.assertIn('10', records[0].error)

    def test_summary_excludes_failures(self):
        records = [
            BenchmarkRecord(1, 'rhlp', 100, 1.0, 0, 1, eqm=0.2, wall_seconds=1.0),
            BenchmarkRecord(1, 'rhlp', 100, 1.0, 1, 2, eqm=0.4, wall_seconds=3.0),
            BenchmarkRecord(1, 'rhlp', 100, 1.0, 2, 3, eqm=math.nan, wall_seconds=0.0, failed=True),
        ]
        [row] = summarize(records)
        self.assertAlmostEqual(row.mean_eqm, 0.3)
        self.assertAlmostEqual(row.mean_wall_seconds, 2.0)
        self.assertEqual((row.replicates, row.failures), (3, 1))

    def test_timing_ratio(self):
        records = [
            BenchmarkRecord(1, 'hmm', 100, 1.0, 0, 1, eqm=0.1, wall_seconds=0.5),
            BenchmarkRecord(1, 'hmm', 1000, 1.0, 0, 2, eqm=0.1, wall_seconds=2.0),
            BenchmarkRecord(1, 'hmm', 1000, 1.0, 1, 3, eqm=0.1, wall_seconds=4.0),
        ]
        self.assertAlmostEqual(timing_ratio(records, 'hmm', 100, 1000), 6.0)
        with self.assertRaises(ValueError):
            timing_ratio(records, 'rhlp', 100, 1000)

    def test_bic_study_single_cell(self):
        table = bic_study(120, 1.0, 2, [4], [2], seed=0, config=FAST)
        self.assertEqual(table, {(4, 2): 100.0})

    def test_bic_study_threads_do_not_change_the_table(self):
        serial = bic_study(80, 1.0, 2, [1, 2], [1, 2], seed=4, config=FAST)
        parallel = bic_study(80, 1.0, 2, [1, 2], [1, 2], seed=4, config=FAST, threads=3)
        self.assertEqual(serial, parallel)

    def test_bic_study_covers_the_grid(self):
        table = bic_study(80, 1.0, 1, [1, 2], [1, 2], seed=0, config=FAST)
        self.assertEqual(set(table), {(1, 1), (1, 2), (2, 1), (2, 2)})
        self.assertAlmostEqual(sum(table.values()), 100.0)


@unittest.skipUnless(settings.RHLP_SLOW_TESTS, 'set RHLP_SLOW_TESTS=true to run simulation acceptance tests')
class SimulationAcceptanceTests(SimpleTestCase):

    config = FitConfig(n_starts=10)

    def test_error_shrinks_with_sample_size(self):
        records = sweep([3], [100, 300, 1000], [1.5], ['rhlp'], 10, seed=0, config=self.config)
        means = [row.mean_eqm for row in sorted(summarize(records), key=lambda row: row.n)]
        self.assertLess(means[1], means[0])
        self.assertLess(means[2], means[1])

    def test_smooth_curve_favours_logistic_gates(self):
        records = sweep([3], [500], [1.5], list(METHODS), 10, seed=1, config=self.config)
        means = {row.method: row.mean_eqm for row in summarize(records)}
        self.assertLessEqual(means['rhlp'], means['piecewise'])
        self.assertLessEqual(means['rhlp'], means['hmm'])

    def test_noiseless_switch_is_recovered(self):
        data, truth = generate(2, 200, 0.0, seed=0)
        outcome = fit_method('rhlp', data, 2, 2, self.config)
        self.assertLess(eqm(truth, outcome.fitted), 1e-3)

    def test_dynamic_programming_scales_worse(self):
        records = sweep([2], [500, 2000], [1.0], ['rhlp', 'piecewise'], 2, seed=2, config=self.config)
        self.assertGreater(
            timing_ratio(records, 'piecewise', 500, 2000),
            timing_ratio(records, 'rhlp', 500, 2000),
        )
