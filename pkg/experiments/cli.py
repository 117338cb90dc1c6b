"""Argument helpers shared by the fit / evaluate management commands."""

from django.core.management.base import CommandError

from averaging.core import Task
from averaging.data import CsvSchema, load_csv
from averaging.exceptions import DataFormatError, SchemaError


def add_csv_arguments(parser):
    parser.add_argument('--label-col', type=str, default='label')
    parser.add_argument('--task', type=str, choices=[t.value for t in Task], default=Task.CLASSIFICATION.value)
    parser.add_argument('--feature-cols', nargs='+', help='Feature columns (default: every other column)')
    parser.add_argument('--region-col', type=str, help='Optional integer region tag column')


def read_dataset(path, options):
    schema = CsvSchema(
        label_col=options['label_col'],
        task=Task(options['task']),
        feature_cols=tuple(options['feature_cols']) if options.get('feature_cols') else None,
        region_col=options.get('region_col'),
    )
    try:
        return load_csv(path, schema)
    except (SchemaError, DataFormatError) as e:
        raise CommandError(str(e), returncode=1)
