"""
Management command to choose (K, p) by BIC on a `t,x` CSV.
"""

from pathlib import Path

from django.core.management.base import BaseCommand
from pydantic import ValidationError

from model_selection.criteria import grid_select
from rhlp.exceptions import RhlpError
from workbench.csv_io import read_observations, write_rows
from workbench.services import build_config, command_error, default_prefix, format_table, parse_int_range


class Command(BaseCommand):
    help = 'Fit every (K, p) of a grid and report the BIC table and winner'

    def add_arguments(self, parser):
        parser.add_argument('--input', required=True, help='CSV file with header t,x')
        parser.add_argument('--k-range', required=True, help="K values, e.g. '2:7' or '3,4'")
        parser.add_argument('--p-range', required=True, help="p values, e.g. '1:6'")
        parser.add_argument('--seed', type=int, help='Random seed (default: RHLP_SEED)')
        parser.add_argument('--threads', type=int, help='Worker threads over grid cells')
        parser.add_argument('--n-starts', type=int, help='Number of EM starts per cell')
        parser.add_argument('--output', help='Output CSV (default: <input>.bic.csv)')

    def handle(self, *args, **options):
        try:
            K_range = parse_int_range(options['k_range'], 'K')
            p_range = parse_int_range(options['p_range'], 'p')
            data = read_observations(options['input'])
            config = build_config(options['seed'], options['threads'], options['n_starts'])
            result = grid_select(data, K_range, p_range, config)
        except (RhlpError, ValidationError, ValueError) as exc:
            raise command_error(exc)

        rows = []
        for K in sorted(set(K_range)):
            for p in sorted(set(p_range)):
                cell = result.table.get((K, p))
                if cell is not None:
                    rows.append((K, p, cell.loglik, cell.bic, 'ok'))
                elif (K, p) in result.failed:
                    rows.append((K, p, '', '', 'failed'))
                else:
                    rows.append((K, p, '', '', 'skipped'))

        header = ['K', 'p', 'loglik', 'bic', 'status']
        self.stdout.write(format_table(header, rows))
        output = options['output'] or Path(f"{default_prefix(options['input'])}.bic.csv")
        path = write_rows(output, header, rows)
        K, p = result.best
        self.stdout.write(self.style.SUCCESS(f"BIC selects K={K} p={p} (bic={result.best_cell.bic:.6f}); table in {path}"))
