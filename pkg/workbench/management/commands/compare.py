"""
Management command to compare the three estimators on one signal.
"""

from pathlib import Path

from django.core.management.base import BaseCommand
from pydantic import ValidationError

from rhlp.exceptions import RhlpError
from simulation.estimators import compare_methods
from workbench.csv_io import read_observations, write_rows
from workbench.services import build_config, command_error, default_prefix, format_table, parse_methods


class Command(BaseCommand):
    help = 'Fit rhlp, piecewise and hmm at the same (K, p) and report residual EQM, loglik and fit time'

    def add_arguments(self, parser):
        parser.add_argument('--input', required=True, help='CSV file with header t,x')
        parser.add_argument('--k', type=int, required=True, help='Number of components')
        parser.add_argument('--p', type=int, required=True, help='Polynomial degree')
        parser.add_argument('--methods', default='rhlp,piecewise,hmm', help='Comma-separated methods')
        parser.add_argument('--seed', type=int, help='Random seed (default: RHLP_SEED)')
        parser.add_argument('--threads', type=int, help='Worker threads for the EM starts')
        parser.add_argument('--n-starts', type=int, help='Number of EM starts')
        parser.add_argument('--output', help='Output CSV (default: <input>.compare.csv)')

    def handle(self, *args, **options):
        try:
            data = read_observations(options['input'])
            config = build_config(options['seed'], options['threads'], options['n_starts'])
            rows = compare_methods(data, options['k'], options['p'], config, parse_methods(options['methods']))
        except (RhlpError, ValidationError, ValueError) as exc:
            raise command_error(exc)

        header = ['method', 'eqm', 'loglik', 'wall_seconds']
        table = [(r.method, r.eqm, r.loglik, r.wall_seconds) for r in rows]
        self.stdout.write(format_table(header, table))
        output = options['output'] or Path(f"{default_prefix(options['input'])}.compare.csv")
        path = write_rows(output, header, table)
        self.stdout.write(self.style.SUCCESS(f"Comparison written to {path}"))
