import itertools
import math
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from averaging.exceptions import ArgumentError
from averaging.prior import bernoulli_demo, x_grid


class Command(BaseCommand):
    help = 'Tabulate P(J=1 | x) for two Bernoulli experts under the energy prior'

    def add_arguments(self, parser):
        parser.add_argument('--beta1', type=float, nargs='+', default=[3.0, 5.0, 9.0])
        parser.add_argument('--beta2', type=float, nargs='+', default=[1.0])
        parser.add_argument(
            '--baseline', '--baseline-logodds',
            dest='baseline',
            type=float,
            nargs='+',
            default=[math.log(5)],
            help='Baseline log-odds of J=1 (difference of the training energy totals); one table per value'
        )
        parser.add_argument('--x-min', type=float, default=-3.0)
        parser.add_argument('--x-max', type=float, default=3.0)
        parser.add_argument('--steps', type=int, default=121)
        parser.add_argument('--out', type=str, help='Output directory (default: <OUTPUT_DIR>/prior_demo)')

    def handle(self, *args, **options):
        out = Path(options['out'] or Path(settings.AVERAGING['OUTPUT_DIR']) / 'prior_demo')
        try:
            grid = x_grid(options['x_min'], options['x_max'], options['steps'])
        except ArgumentError as e:
            raise CommandError(str(e), returncode=1)
        out.mkdir(parents=True, exist_ok=True)

        combinations = itertools.product(options['beta1'], options['beta2'], options['baseline'])
        for beta1, beta2, baseline in combinations:
            try:
                frame = bernoulli_demo(beta1, beta2, baseline, grid)
                at_one = float(bernoulli_demo(beta1, beta2, baseline, [1.0])['p_j1'].iloc[0])
            except ArgumentError as e:
                raise CommandError(str(e), returncode=1)
            path = out / f'prior_demo_b1_{beta1:g}_b2_{beta2:g}_c_{baseline:.4f}.csv'
            frame.to_csv(path, index=False, float_format='%.10g', lineterminator='\n')
            self.stdout.write(
                f'beta1={beta1:g} beta2={beta2:g} baseline={baseline:.4f}: '
                f'P(J=1 | x=1) = {at_one:.6f} -> {path.name}'
            )

        self.stdout.write(self.style.SUCCESS(f'Prior demo tables written to {out}'))
