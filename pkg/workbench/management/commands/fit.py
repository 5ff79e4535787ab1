"""
Management command to fit a model on a `t,x` CSV.
"""

from django.core.management.base import BaseCommand
from pydantic import ValidationError

from rhlp.exceptions import RhlpError
from simulation.estimators import METHODS
from workbench.csv_io import read_observations
from workbench.services import (
    band_for, build_config, command_error, default_prefix, fit_observations, write_fit_outputs,
)


class Command(BaseCommand):
    help = (
        'Fit rhlp, piecewise or hmm regression on a t,x CSV and write the model '
        'document, fitted curve, EM trace and (with --band) the confidence band. '
        'Exit codes: 2 parse error, 3 fit failure, 4 precondition violation.'
    )

    def add_arguments(self, parser):
        parser.add_argument('--input', required=True, help='CSV file with header t,x')
        parser.add_argument('--method', choices=METHODS, default='rhlp', help='Estimator (default: rhlp)')
        parser.add_argument('--k', type=int, required=True, help='Number of components / segments / states')
        parser.add_argument('--p', type=int, required=True, help='Polynomial degree')
        parser.add_argument('--seed', type=int, help='Random seed (default: RHLP_SEED)')
        parser.add_argument('--threads', type=int, help='Worker threads for the EM starts')
        parser.add_argument('--n-starts', type=int, help='Number of EM starts')
        parser.add_argument('--gem-irls-cap', type=int, help='Cap on IRLS iterations per EM step (generalized EM)')
        parser.add_argument('--normalize-time', action='store_true', help='Fit on t rescaled to [0, 1]')
        parser.add_argument('--band', type=float, metavar='ALPHA', help='Write a pointwise 1-ALPHA confidence band (rhlp)')
        parser.add_argument('--left-to-right', action='store_true', help='Left-to-right HMM topology (hmm)')
        parser.add_argument('--output', help='Output prefix (default: input path without extension)')

    def handle(self, *args, **options):
        try:
            data = read_observations(options['input'])
            config = build_config(
                options['seed'], options['threads'], options['n_starts'], gem_irls_cap=options['gem_irls_cap'],
            )
            model = fit_observations(
                data, options['method'], options['k'], options['p'], config,
                normalize=options['normalize_time'], left_to_right=options['left_to_right'],
            )
            band = band_for(model, options['band']) if options['band'] is not None else None
            prefix = options['output'] or default_prefix(options['input'])
            written = write_fit_outputs(model, prefix, band)
        except (RhlpError, ValidationError, ValueError) as exc:
            raise command_error(exc)

        self.stdout.write(
            f"{model.method} K={model.K} p={model.p}: loglik={model.loglik:.6f} (n={data.n})"
        )
        for path in written:
            self.stdout.write(f"  wrote {path}")
        self.stdout.write(self.style.SUCCESS('Fit complete'))
