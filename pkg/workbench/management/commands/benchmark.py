"""
Management command to run simulation sweeps and the BIC selection study.
"""

import dataclasses

from django.conf import settings
from django.core.management.base import BaseCommand
from pydantic import ValidationError

from rhlp.exceptions import RhlpError
from simulation.benchmark import BenchmarkRecord, bic_study, summarize, sweep
from workbench.csv_io import write_rows
from workbench.services import build_config, command_error, format_table, parse_int_range, parse_methods


def _number_list(text: str, cast, kind: str):
    try:
        values = [cast(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise ValueError(f"{text!r} is not a comma-separated list of {kind}")
    if not values:
        raise ValueError(f"{text!r} names no {kind}")
    return values


class Command(BaseCommand):
    help = (
        'Run the benchmark sweep (EQM and fit time per scenario, method, n, sigma, '
        'replicate) or, with --bic-study, the BIC selection frequencies on scenario 1.'
    )

    def add_arguments(self, parser):
        parser.add_argument('--scenarios', default='1,2,3', help='Comma-separated scenario ids (default: 1,2,3)')
        parser.add_argument('--methods', default='rhlp,piecewise,hmm', help='Comma-separated methods')
        parser.add_argument('--sizes', help='Comma-separated sample sizes (default: RHLP_BENCHMARK_SIZES)')
        parser.add_argument('--sigmas', help='Comma-separated noise levels (default: RHLP_BENCHMARK_SIGMAS)')
        parser.add_argument('--replicates', type=int, help='Replicates per cell (default: RHLP_BENCHMARK_REPLICATES)')
        parser.add_argument('--seed', type=int, help='Random seed (default: RHLP_SEED)')
        parser.add_argument('--threads', type=int, default=1, help='Worker threads over records or BIC grid cells')
        parser.add_argument('--n-starts', type=int, help='Number of EM starts per fit')
        parser.add_argument('--bic-study', action='store_true', help='Tabulate BIC choices of (K, p) instead')
        parser.add_argument('--k-range', default='2:7', help='K grid for --bic-study (default: 2:7)')
        parser.add_argument('--p-range', default='1:6', help='p grid for --bic-study (default: 1:6)')
        parser.add_argument('--output', help='Output CSV (default: benchmark.csv or bic_study.csv)')

    def handle(self, *args, **options):
        try:
            sizes = _number_list(options['sizes'], int, 'sample sizes') if options['sizes'] else list(settings.RHLP_BENCHMARK_SIZES)
            sigmas = _number_list(options['sigmas'], float, 'noise levels') if options['sigmas'] else list(settings.RHLP_BENCHMARK_SIGMAS)
            replicates = options['replicates'] or settings.RHLP_BENCHMARK_REPLICATES
            config = build_config(options['seed'], 1, options['n_starts'])
            if options['bic_study']:
                self._bic_study(options, sizes, sigmas, replicates, config)
            else:
                self._sweep(options, sizes, sigmas, replicates, config)
        except (RhlpError, ValidationError, ValueError) as exc:
            raise command_error(exc)

    def _sweep(self, options, sizes, sigmas, replicates, config):
        scenarios = parse_int_range(options['scenarios'], 'scenarios')
        methods = parse_methods(options['methods'])
        records = sweep(
            scenarios, sizes, sigmas, methods, replicates, config.seed,
            config=config, threads=max(1, options['threads']),
        )
        header = [f.name for f in dataclasses.fields(BenchmarkRecord)]
        path = write_rows(options['output'] or 'benchmark.csv', header, (dataclasses.astuple(r) for r in records))

        summary = summarize(records)
        self.stdout.write(format_table(
            ['scenario', 'method', 'n', 'sigma', 'mean_eqm', 'mean_wall_s', 'failed'],
            [(s.scenario, s.method, s.n, s.sigma, s.mean_eqm, s.mean_wall_seconds, s.failures) for s in summary],
        ))
        self.stdout.write('Wall times are machine-dependent.')
        self.stdout.write(self.style.SUCCESS(f"{len(records)} records written to {path}"))

    def _bic_study(self, options, sizes, sigmas, replicates, config):
        K_range = parse_int_range(options['k_range'], 'K')
        p_range = parse_int_range(options['p_range'], 'p')
        rows = []
        for n in sizes:
            for sigma in sigmas:
                table = bic_study(
                    n, sigma, replicates, K_range, p_range, config.seed, config,
                    threads=max(1, options['threads']),
                )
                rows.extend((n, sigma, K, p, percent) for (K, p), percent in table.items())
                winner = max(table, key=table.get)
                self.stdout.write(f"n={n} sigma={sigma}: modal choice K={winner[0]} p={winner[1]} ({table[winner]:.1f}%)")
        path = write_rows(options['output'] or 'bic_study.csv', ['n', 'sigma', 'K', 'p', 'percent'], rows)
        self.stdout.write(self.style.SUCCESS(f"BIC study written to {path}"))
