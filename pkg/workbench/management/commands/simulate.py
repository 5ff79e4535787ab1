"""
Management command to sample one of the simulation scenarios.
"""

from django.conf import settings
from django.core.management.base import BaseCommand

from rhlp.exceptions import RhlpError
from simulation.scenarios import generate, get_scenario
from workbench.csv_io import write_rows
from workbench.services import command_error


class Command(BaseCommand):
    help = 'Write a simulated t,x,truth CSV for scenario 1, 2 or 3 on [0, 5]'

    def add_arguments(self, parser):
        parser.add_argument('--scenario', type=int, required=True, help='Scenario id (1, 2 or 3)')
        parser.add_argument('--n', type=int, default=500, help='Number of samples (default: 500)')
        parser.add_argument('--sigma', type=float, default=1.5, help='Noise standard deviation (default: 1.5)')
        parser.add_argument('--seed', type=int, help='Random seed (default: RHLP_SEED)')
        parser.add_argument('--output', help='Output CSV (default: scenario<id>.csv)')

    def handle(self, *args, **options):
        seed = options['seed'] if options['seed'] is not None else settings.RHLP_SEED
        try:
            scenario = get_scenario(options['scenario'])
            data, truth = generate(scenario, options['n'], options['sigma'], seed)
        except (RhlpError, ValueError) as exc:
            raise command_error(exc)

        output = options['output'] or f"scenario{scenario.id}.csv"
        path = write_rows(output, ['t', 'x', 'truth'], zip(data.t, data.x, truth))
        self.stdout.write(self.style.SUCCESS(
            f"Scenario {scenario.id} ({scenario.description}): n={data.n} sigma={options['sigma']} -> {path}"
        ))
