from pathlib import Path

import numpy as np
import pandas as pd
from django.core.management.base import BaseCommand, CommandError

from averaging.core import Task
from averaging.exceptions import ArgumentError, DataFormatError
from averaging.metrics import accuracy, rmse_r2
from averaging.predictors import load_predictors, loglik_table
from experiments.cli import add_csv_arguments, read_dataset


class Command(BaseCommand):
    help = 'Score saved predictors on a CSV set and write their log-likelihood table'

    def add_arguments(self, parser):
        parser.add_argument('--predictors', type=str, required=True, help='JSON written by the fit command')
        parser.add_argument('--data', type=str, required=True, help='CSV to evaluate on')
        add_csv_arguments(parser)
        parser.add_argument('--out', type=str, required=True, help='Log-likelihood table CSV')

    def handle(self, *args, **options):
        try:
            predictors = load_predictors(options['predictors'])
        except DataFormatError as e:
            raise CommandError(str(e), returncode=1)
        data = read_dataset(options['data'], options)

        try:
            table = loglik_table(predictors, data)
        except ArgumentError as e:
            raise CommandError(str(e), returncode=1)

        out = Path(options['out'])
        out.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(table.loglik, columns=list(table.model_names)).to_csv(
            out, index=False, float_format='%.17g', lineterminator='\n'
        )

        rows = []
        for j, predictor in enumerate(predictors):
            row = {'model': predictor.name, 'mean_loglik': float(np.mean(table.loglik[:, j]))}
            if data.task is Task.CLASSIFICATION:
                row['accuracy'] = accuracy(predictor.predict_proba(data.features), data.labels)
            else:
                row['rmse'], row['r2'] = rmse_r2(predictor.predict(data.features), data.labels)
            rows.append(row)
        self.stdout.write(pd.DataFrame(rows).to_string(index=False, float_format=lambda v: f'{v:.4f}'))
        self.stdout.write(self.style.SUCCESS(f'Wrote {table.n} x {table.m} log-likelihood table to {out}'))
