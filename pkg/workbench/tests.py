import csv
import json
import logging
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from rhlp.exceptions import (
    AllStartsFailed, DegenerateComponent, EmptyGrid, InputFormatError, TooFewPoints, UnknownScenario,
)

from .csv_io import read_observations, write_rows
from .serializers import SCHEMA_VERSION, parse_document, render_document, validate_document
from .services import (
    EXIT_FIT, EXIT_PARSE, EXIT_PRECONDITION, build_config, command_error, exit_code_for, parse_int_range,
)


def read_csv(path):
    with open(path, newline='', encoding='utf-8') as handle:
        return list(csv.DictReader(handle))


def rhlp_document(**overrides):
    document = {
        'schema_version': SCHEMA_VERSION,
        'method': 'rhlp',
        'K': 2,
        'p': 1,
        'parameters': {'w': [[3.5, -1.25], [0.0, 0.0]], 'beta': [[1.0, 0.1], [-2.0, 0.3]], 'sigma2': 0.75},
        'loglik': -123.456789,
        'metadata': {
            'n': 50, 'n_iter': 17, 'seed': 0, 'converged': True,
            'normalized_time': False, 'time_shift': 0.0, 'time_scale': 1.0,
        },
    }
    document.update(overrides)
    return document


class CommandTestCase(SimpleTestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def run_command(self, name, **options):
        out = StringIO()
        call_command(name, stdout=out, **options)
        return out.getvalue()

    def write_quadratic(self, name='quadratic.csv', n=40):
        t = np.linspace(0.0, 4.0, n)
        x = 1.0 + 2.0 * t - 0.5 * t ** 2
        path = self.tmp / name
        write_rows(path, ['t', 'x'], zip(t, x))
        return path, t, x

    def simulate(self, scenario=2, n=120, seed=3, name='sim.csv'):
        path = self.tmp / name
        self.run_command('simulate', scenario=scenario, n=n, sigma=1.0, seed=seed, output=str(path))
        return path


class SimulateCommandTests(CommandTestCase):

    def test_same_seed_same_bytes(self):
        first = self.simulate(name='a.csv')
        second = self.simulate(name='b.csv')
        self.assertEqual(first.read_bytes(), second.read_bytes())
        rows = read_csv(first)
        self.assertEqual(len(rows), 120)
        self.assertEqual(list(rows[0]), ['t', 'x', 'truth'])
        self.assertEqual(float(rows[0]['truth']), 33.0)

    def test_unknown_scenario(self):
        with self.assertRaises(CommandError) as ctx:
            self.run_command('simulate', scenario=7, output=str(self.tmp / 'x.csv'))
        self.assertEqual(ctx.exception.returncode, EXIT_PRECONDITION)


class FitCommandTests(CommandTestCase):

    def test_single_component_recovers_quadratic(self):
        path, t, x = self.write_quadratic()
        prefix = self.tmp / 'out' / 'quad'
        output = self.run_command('fit', input=str(path), k=1, p=2, n_starts=2, output=str(prefix))
        self.assertIn('Fit complete', output)

        curve = read_csv(f"{prefix}.curve.csv")
        self.assertEqual(list(curve[0]), ['t', 'x', 'fitted', 'map_label', 'pi_1'])
        np.testing.assert_allclose([float(row['fitted']) for row in curve], x, atol=1e-6)
        np.testing.assert_array_equal([float(row['t']) for row in curve], t)

        document = parse_document(Path(f"{prefix}.model.json").read_text())
        self.assertEqual((document['method'], document['K'], document['p']), ('rhlp', 1, 2))
        np.testing.assert_allclose(document['parameters']['beta'][0], [1.0, 2.0, -0.5], atol=1e-6)
        self.assertEqual(document['metadata']['n'], 40)

        trace = read_csv(f"{prefix}.trace.csv")
        self.assertEqual(trace[0]['iteration'], '0')
        self.assertFalse(Path(f"{prefix}.band.csv").exists())

    def test_normalized_time_reports_original_coefficients(self):
        path, _, _ = self.write_quadratic()
        prefix = self.tmp / 'norm'
        self.run_command('fit', input=str(path), k=1, p=2, n_starts=2, normalize_time=True, output=str(prefix))
        document = json.loads(Path(f"{prefix}.model.json").read_text())
        self.assertTrue(document['metadata']['normalized_time'])
        np.testing.assert_allclose(document['parameters']['beta'][0], [1.0, 2.0, -0.5], atol=1e-5)

    def test_gem_irls_cap(self):
        path = self.simulate()
        prefix = self.tmp / 'capped'
        self.run_command('fit', input=str(path), k=2, p=2, n_starts=2, gem_irls_cap=1, output=str(prefix))
        trace = [float(row['loglik']) for row in read_csv(f"{prefix}.trace.csv")]
        self.assertTrue(all(later >= earlier - 1e-10 for earlier, later in zip(trace, trace[1:])))
        with self.assertRaises(CommandError) as ctx:
            self.run_command('fit', input=str(path), k=2, p=2, gem_irls_cap=0, output=str(prefix))
        self.assertEqual(ctx.exception.returncode, EXIT_PRECONDITION)

    def test_band_output(self):
        path = self.simulate()
        prefix = self.tmp / 'banded'
        self.run_command('fit', input=str(path), k=2, p=2, n_starts=2, band=0.05, output=str(prefix))
        band = read_csv(f"{prefix}.band.csv")
        self.assertEqual(len(band), 120)
        for row in band:
            self.assertLessEqual(float(row['lower']), float(row['center']))
            self.assertLessEqual(float(row['center']), float(row['upper']))

    def test_band_is_rhlp_only(self):
        path = self.simulate()
        with self.assertRaises(CommandError) as ctx:
            self.run_command('fit', input=str(path), method='piecewise', k=2, p=2, band=0.05, output=str(self.tmp / 'pw'))
        self.assertEqual(ctx.exception.returncode, EXIT_PRECONDITION)

    def test_piecewise_document(self):
        path = self.simulate()
        prefix = self.tmp / 'pw'
        self.run_command('fit', input=str(path), method='piecewise', k=2, p=2, output=str(prefix))
        document = parse_document(Path(f"{prefix}.model.json").read_text())
        self.assertEqual(len(document['parameters']['boundaries']), 1)
        self.assertEqual(list(read_csv(f"{prefix}.curve.csv")[0]), ['t', 'x', 'fitted', 'map_label'])
        self.assertFalse(Path(f"{prefix}.trace.csv").exists())

    def test_hmm_document(self):
        path = self.simulate()
        prefix = self.tmp / 'hmm'
        self.run_command('fit', input=str(path), method='hmm', k=2, p=2, n_starts=2, output=str(prefix))
        document = parse_document(Path(f"{prefix}.model.json").read_text())
        trans = np.array(document['parameters']['trans'])
        np.testing.assert_allclose(trans.sum(axis=1), 1.0, atol=1e-9)
        curve = read_csv(f"{prefix}.curve.csv")
        self.assertIn('omega_2', curve[0])

    def test_malformed_row_names_the_line(self):
        path = self.tmp / 'bad.csv'
        path.write_text('t,x\n0,1\n1,abc\n')
        with self.assertRaises(CommandError) as ctx:
            self.run_command('fit', input=str(path), k=1, p=1, output=str(self.tmp / 'bad'))
        self.assertEqual(ctx.exception.returncode, EXIT_PARSE)
        self.assertIn('line 3', str(ctx.exception))

    def test_too_few_points(self):
        path, _, _ = self.write_quadratic(n=7)
        with self.assertRaises(CommandError) as ctx:
            self.run_command('fit', input=str(path), k=2, p=2, output=str(self.tmp / 'few'))
        self.assertEqual(ctx.exception.returncode, EXIT_PRECONDITION)


class SelectCommandTests(CommandTestCase):

    def test_singleton_grid(self):
        path, _, _ = self.write_quadratic()
        output_path = self.tmp / 'grid.csv'
        output = self.run_command('select', input=str(path), k_range='1', p_range='2', n_starts=2, output=str(output_path))
        self.assertIn('BIC selects K=1 p=2', output)
        [row] = read_csv(output_path)
        self.assertEqual(row['status'], 'ok')

    def test_grid_with_skipped_cells(self):
        path = self.simulate(n=11)
        output_path = self.tmp / 'grid.csv'
        self.run_command('select', input=str(path), k_range='1:3', p_range='2', n_starts=2, output=str(output_path))
        statuses = {row['K']: row['status'] for row in read_csv(output_path)}
        self.assertEqual(statuses['1'], 'ok')
        self.assertEqual(statuses['3'], 'skipped')

    def test_empty_grid(self):
        path, _, _ = self.write_quadratic(n=10)
        with self.assertRaises(CommandError) as ctx:
            self.run_command('select', input=str(path), k_range='3:4', p_range='2:3', output=str(self.tmp / 'g.csv'))
        self.assertEqual(ctx.exception.returncode, EXIT_PRECONDITION)


class CompareAndBenchmarkCommandTests(CommandTestCase):

    def test_compare_writes_one_row_per_method(self):
        path = self.simulate()
        output_path = self.tmp / 'compare.csv'
        self.run_command('compare', input=str(path), k=2, p=2, n_starts=2, output=str(output_path))
        rows = read_csv(output_path)
        self.assertEqual([row['method'] for row in rows], ['rhlp', 'piecewise', 'hmm'])

    def test_unknown_method(self):
        path = self.simulate()
        with self.assertRaises(CommandError) as ctx:
            self.run_command('compare', input=str(path), k=2, p=2, methods='rhlp,spline', output=str(self.tmp / 'c.csv'))
        self.assertEqual(ctx.exception.returncode, EXIT_PRECONDITION)

    def test_single_cell_sweep(self):
        output_path = self.tmp / 'bench.csv'
        output = self.run_command(
            'benchmark', scenarios='2', methods='piecewise', sizes='40', sigmas='1',
            replicates=1, output=str(output_path),
        )
        self.assertIn('Wall times are machine-dependent.', output)
        [record] = read_csv(output_path)
        self.assertEqual((record['scenario'], record['method'], record['n']), ('2', 'piecewise', '40'))
        self.assertEqual(record['failed'], 'false')

    def test_sizes_are_a_list(self):
        output_path = self.tmp / 'sizes.csv'
        self.run_command(
            'benchmark', scenarios='2', methods='piecewise', sizes='40,60', sigmas='1',
            replicates=1, output=str(output_path),
        )
        self.assertEqual([row['n'] for row in read_csv(output_path)], ['40', '60'])
        with self.assertRaises(CommandError) as ctx:
            self.run_command('benchmark', sizes='40:60', sigmas='1', replicates=1, output=str(output_path))
        self.assertEqual(ctx.exception.returncode, EXIT_PRECONDITION)

    def test_bic_study_threads_do_not_change_the_table(self):
        tables = []
        for threads in (1, 3):
            output_path = self.tmp / f"bic_{threads}.csv"
            self.run_command(
                'benchmark', bic_study=True, sizes='60', sigmas='1', replicates=2,
                k_range='1:2', p_range='1:2', n_starts=2, threads=threads, output=str(output_path),
            )
            tables.append(output_path.read_text())
        self.assertEqual(tables[0], tables[1])

    def test_bic_study(self):
        output_path = self.tmp / 'bic.csv'
        self.run_command(
            'benchmark', bic_study=True, sizes='60', sigmas='1', replicates=1,
            k_range='1:2', p_range='2', n_starts=2, output=str(output_path),
        )
        rows = read_csv(output_path)
        self.assertEqual([(row['K'], row['p']) for row in rows], [('1', '2'), ('2', '2')])
        self.assertAlmostEqual(sum(float(row['percent']) for row in rows), 100.0)


class CsvTests(CommandTestCase):

    def test_comments_blank_lines_and_extra_columns(self):
        path = self.tmp / 'data.csv'
        path.write_text('# sensor 4\n\nt,x,truth\n0.0,1.5,1.0\n\n1.0,2.5,2.0\n')
        data = read_observations(path)
        np.testing.assert_array_equal(data.t, [0.0, 1.0])
        np.testing.assert_array_equal(data.x, [1.5, 2.5])

    def test_wrong_header(self):
        path = self.tmp / 'data.csv'
        path.write_text('time,value\n0,1\n')
        with self.assertRaises(InputFormatError) as ctx:
            read_observations(path)
        self.assertEqual(ctx.exception.line, 1)

    def test_ragged_row(self):
        path = self.tmp / 'data.csv'
        path.write_text('t,x\n0,1\n1,2,3\n')
        with self.assertRaises(InputFormatError) as ctx:
            read_observations(path)
        self.assertEqual(ctx.exception.line, 3)

    def test_non_finite_value(self):
        path = self.tmp / 'data.csv'
        path.write_text('t,x\n0,1\n1,nan\n')
        with self.assertRaises(InputFormatError):
            read_observations(path)

    def test_missing_file(self):
        with self.assertRaises(InputFormatError):
            read_observations(self.tmp / 'absent.csv')

    def test_floats_round_trip(self):
        path = self.tmp / 'data.csv'
        values = [0.1, 1 / 3, 2.0 ** -40]
        write_rows(path, ['t', 'x'], zip([0.0, 1.0, 2.0], values))
        np.testing.assert_array_equal(read_observations(path).x, values)


class SerializerTests(SimpleTestCase):

    def test_render_then_parse(self):
        document = rhlp_document()
        self.assertEqual(parse_document(render_document(document)), validate_document(document))
        self.assertEqual(parse_document(render_document(document))['loglik'], -123.456789)

    def test_random_documents_survive_render_and_parse(self):
        rng = np.random.default_rng(31)

        def values(shape):
            return (rng.standard_normal(shape) * 10.0 ** rng.uniform(-8, 8, shape)).tolist()

        for _ in range(40):
            K, p = int(rng.integers(1, 6)), int(rng.integers(0, 5))
            method = str(rng.choice(['rhlp', 'piecewise', 'hmm']))
            if method == 'rhlp':
                w = values((K, 2))
                w[-1] = [0.0, 0.0]
                parameters = {'w': w}
            elif method == 'piecewise':
                parameters = {'boundaries': sorted(int(b) for b in rng.choice(np.arange(1, 500), K - 1, replace=False))}
            else:
                parameters = {'initial': rng.dirichlet(np.ones(K)).tolist(), 'trans': rng.dirichlet(np.ones(K), K).tolist()}
            parameters['beta'] = values((K, p + 1))
            parameters['sigma2'] = float(10.0 ** rng.uniform(-12, 4))
            document = rhlp_document(method=method, K=K, p=p, parameters=parameters,
                                     loglik=float(rng.standard_normal() * 1e4))
            parsed = parse_document(render_document(document))
            self.assertEqual(parsed, validate_document(document))
            self.assertEqual(parsed['parameters']['beta'], parameters['beta'])
            self.assertEqual(parsed['parameters']['sigma2'], parameters['sigma2'])
            self.assertEqual(parsed['loglik'], document['loglik'])

    def test_unsupported_schema_version(self):
        with self.assertRaises(InputFormatError) as ctx:
            validate_document(rhlp_document(schema_version=2))
        self.assertIn('schema_version', str(ctx.exception))

    def test_last_gate_row_must_be_zero(self):
        document = rhlp_document()
        document['parameters']['w'][1] = [0.0, 1.0]
        with self.assertRaises(InputFormatError):
            validate_document(document)

    def test_shape_follows_k_and_p(self):
        with self.assertRaises(InputFormatError):
            validate_document(rhlp_document(p=2))

    def test_piecewise_boundaries_increase(self):
        document = rhlp_document(method='piecewise', K=3, parameters={
            'boundaries': [20, 10], 'beta': [[0.0, 1.0]] * 3, 'sigma2': 1.0,
        })
        with self.assertRaises(InputFormatError):
            validate_document(document)

    def test_invalid_json_names_the_line(self):
        with self.assertRaises(InputFormatError) as ctx:
            parse_document('{\n  "schema_version": 1,\n  oops\n}')
        self.assertEqual(ctx.exception.line, 3)


class ServiceTests(SimpleTestCase):

    def test_exit_codes(self):
        self.assertEqual(exit_code_for(InputFormatError('bad', 2)), EXIT_PARSE)
        self.assertEqual(exit_code_for(AllStartsFailed('none')), EXIT_FIT)
        self.assertEqual(exit_code_for(DegenerateComponent(1, 0.0)), EXIT_FIT)
        self.assertEqual(exit_code_for(TooFewPoints(5, 2, 2)), EXIT_PRECONDITION)
        self.assertEqual(exit_code_for(EmptyGrid('empty')), EXIT_PRECONDITION)
        self.assertEqual(exit_code_for(UnknownScenario('9')), EXIT_PRECONDITION)

    def test_command_error_logs_below_error_level(self):
        with self.assertLogs('workbench.services', level='DEBUG') as logs:
            error = command_error(TooFewPoints(5, 2, 2))
        self.assertEqual(error.returncode, EXIT_PRECONDITION)
        self.assertEqual([record.levelno for record in logs.records], [logging.DEBUG])

    def test_config_carries_the_irls_cap(self):
        self.assertEqual(build_config(seed=3, gem_irls_cap=2).irls_cap, 2)
        self.assertIsNone(build_config(seed=3).gem_irls_cap)

    def test_settings_need_no_database(self):
        self.assertTrue(all(db['ENGINE'] == 'django.db.backends.dummy' for db in settings.DATABASES.values()))
        self.assertNotIn('django.contrib.auth', settings.INSTALLED_APPS)

    def test_int_ranges(self):
        self.assertEqual(parse_int_range('2:5', 'K'), [2, 3, 4, 5])
        self.assertEqual(parse_int_range('3,1', 'K'), [3, 1])
        self.assertEqual(parse_int_range('4', 'K'), [4])
        for text in ('5:2', 'a:b', ''):
            with self.assertRaises(ValueError):
                parse_int_range(text, 'K')
