import json
from pathlib import Path

import pandas as pd
from django.core.management.base import BaseCommand, CommandError

from averaging.exceptions import ArgumentError, AveragingError
from averaging.predictors import default_roster, dump_predictors, fit_roster, loglik_table
from experiments.cli import add_csv_arguments, read_dataset


class Command(BaseCommand):
    help = 'Fit a predictor roster on a CSV training set and save it as JSON'

    def add_arguments(self, parser):
        parser.add_argument('--train', type=str, required=True, help='Training CSV')
        add_csv_arguments(parser)
        parser.add_argument('--roster', type=str, help='JSON list of roster entries (default roster otherwise)')
        parser.add_argument('--offset', type=float, default=1.0, help='Offset used by the default soft circles')
        parser.add_argument('--out', type=str, required=True, help='Predictors JSON path')

    def handle(self, *args, **options):
        data = read_dataset(options['train'], options)
        if options['roster']:
            try:
                specs = json.loads(Path(options['roster']).read_text(encoding='utf-8'))
            except (OSError, json.JSONDecodeError) as e:
                raise CommandError(f'Cannot read roster: {e}', returncode=1)
        else:
            specs = default_roster(data.task, offset=options['offset'])

        try:
            predictors = fit_roster(specs, data)
        except ArgumentError as e:
            raise CommandError(str(e), returncode=1)
        except AveragingError as e:
            raise CommandError(str(e), returncode=2)

        out = dump_predictors(predictors, options['out'])
        table = loglik_table(predictors, data, training=True)
        totals = pd.Series(table.column_totals(), index=table.model_names)
        for predictor in predictors:
            for warning in predictor.fit_warnings:
                self.stdout.write(self.style.WARNING(f'{predictor.name}: {warning}'))
        self.stdout.write('Training log-likelihood totals:')
        self.stdout.write(totals.to_string(float_format=lambda v: f'{v:.4f}'))
        self.stdout.write(self.style.SUCCESS(f'Saved {len(predictors)} predictors to {out}'))
