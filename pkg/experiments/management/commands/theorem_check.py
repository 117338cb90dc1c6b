"""
Check a weight matrix against a log-likelihood table.

Both files are CSV with one column per model and a header of model names, as
written by ``run`` (weights_<method>.csv and test_loglik.csv).
Exit codes: 1 malformed input, 3 bound violated.
"""

import json
from pathlib import Path

import pandas as pd
from django.core.management.base import BaseCommand, CommandError

from averaging.core import SIMPLEX_TOL, LikelihoodTable
from averaging.exceptions import ArgumentError
from averaging.metrics import theorem1_check


def read_matrix(path):
    path = Path(path)
    if not path.exists():
        raise CommandError(f'File not found: {path}', returncode=1)
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise CommandError(f'Could not read {path}: {e}', returncode=1)
    bad = [c for c in frame.columns if not pd.api.types.is_numeric_dtype(frame[c])]
    if bad:
        raise CommandError(f'{path}: non-numeric columns {bad}', returncode=1)
    return frame


class Command(BaseCommand):
    help = 'Verify that mixture weights never lose to a weighted single model, row by row'

    def add_arguments(self, parser):
        parser.add_argument('--weights', type=str, required=True)
        parser.add_argument('--table', type=str, required=True, help='Log-likelihood table')
        parser.add_argument('--tolerance', type=float, default=SIMPLEX_TOL)
        parser.add_argument('--report', type=str, help='Write the summary as JSON here')

    def handle(self, *args, **options):
        weights = read_matrix(options['weights'])
        loglik = read_matrix(options['table'])
        if list(weights.columns) != list(loglik.columns):
            raise CommandError(
                f'Model columns differ: weights {list(weights.columns)} vs table {list(loglik.columns)}',
                returncode=1,
            )

        try:
            table = LikelihoodTable(loglik=loglik.to_numpy(), model_names=tuple(loglik.columns))
            report = theorem1_check(weights.to_numpy(), table, tolerance=options['tolerance'])
        except ArgumentError as e:
            raise CommandError(str(e), returncode=1)

        summary = report.summary()
        if options['report']:
            Path(options['report']).write_text(json.dumps(summary, indent=2) + '\n', encoding='utf-8')
        self.stdout.write(
            f"rows={summary['rows']} max_violation={summary['max_violation']:.3e} "
            f"violations={summary['violations']} aggregate_slack={summary['aggregate_slack']:.6f}"
        )
        if not report.passed:
            raise CommandError('Mixture bound violated', returncode=3)
        self.stdout.write(self.style.SUCCESS('Mixture bound holds on every row'))
