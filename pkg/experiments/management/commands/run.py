"""
Run the averaging experiment end to end.

Settings defaults < --config document < command-line flags.
Exit codes: 1 invalid config, 2 every repetition failed, 3 the mixture bound
was violated for some method, 4 IA-BMA fell behind another method and
--require-ordering was given.
"""

import json
import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from experiments.experiment_service import ExperimentService
from experiments.serializers import ExperimentConfigSerializer

logger = logging.getLogger(__name__)


def format_errors(errors, prefix=''):
    """Flatten DRF's nested error dict into 'field: message' lines."""
    lines = []
    if isinstance(errors, dict):
        for key, value in errors.items():
            lines.extend(format_errors(value, f"{prefix}{key}." if key != 'non_field_errors' else prefix))
    elif isinstance(errors, list):
        for value in errors:
            lines.extend(format_errors(value, prefix))
    else:
        lines.append(f"{prefix.rstrip('.') or 'config'}: {errors}")
    return lines


class Command(BaseCommand):
    help = 'Fit the roster, IA-BMA and the baselines over several seeded repetitions'

    def add_arguments(self, parser):
        parser.add_argument('--config', type=str, help='JSON experiment document')
        parser.add_argument('--seed', type=int, help='Master seed')
        parser.add_argument('--out', type=str, help='Output directory')
        parser.add_argument('--repetitions', type=int, help='Number of repetitions')
        parser.add_argument('--methods', nargs='+', help='Subset of methods to run')
        parser.add_argument('--prior-scale', choices=['sum', 'mean'], help='Energy prior scale for IA-BMA')
        parser.add_argument(
            '--require-ordering',
            action='store_true',
            help='Exit with 4 when IA-BMA is worse than another method beyond the metric tolerance'
        )
        parser.add_argument(
            '--celery',
            action='store_true',
            help='Dispatch repetitions to celery workers instead of running them in-process'
        )
        parser.add_argument('--no-record', action='store_true', help='Do not store the run in the database')

    def load_document(self, path):
        if not path:
            return {}
        path = Path(path)
        if not path.exists():
            raise CommandError(f'Config file not found: {path}', returncode=1)
        try:
            document = json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise CommandError(f'Config file {path} is not valid JSON: {e}', returncode=1)
        if not isinstance(document, dict):
            raise CommandError('The config document must be a JSON object', returncode=1)
        return document

    def handle(self, *args, **options):
        document = self.load_document(options['config'])
        overrides = {
            'master_seed': options['seed'],
            'output_dir': options['out'],
            'repetitions': options['repetitions'],
            'methods': options['methods'],
            'prior_scale': options['prior_scale'],
        }
        document.update({key: value for key, value in overrides.items() if value is not None})

        serializer = ExperimentConfigSerializer(data=document)
        if not serializer.is_valid():
            for line in format_errors(serializer.errors):
                self.stderr.write(self.style.ERROR(line))
            raise CommandError('Invalid experiment configuration', returncode=1)

        record = False if options['no_record'] else None
        service = ExperimentService(serializer.validated_data, record=record)
        self.stdout.write(
            f"Running {service.config['repetitions']} repetition(s) of {', '.join(service.methods)} "
            f"into {service.output_dir}"
        )
        summary = service.run(use_celery=options['celery'])

        self.stdout.write((summary.output_dir / 'aggregate.txt').read_text(encoding='utf-8'))
        for result in summary.repetitions:
            if result['status'] == 'failed':
                self.stdout.write(self.style.WARNING(f"rep_{result['repetition']} failed: {result['error']}"))

        if summary.status == 'failed':
            raise CommandError('Every repetition failed', returncode=2)
        if summary.ordering is not None:
            self.stdout.write('IA-BMA against the other methods:')
            self.stdout.write(summary.ordering.to_string(index=False, float_format=lambda v: f'{v:.4f}'))

        if not summary.theorem_passed:
            raise CommandError('The mixture bound was violated; see theorem.json in each repetition', returncode=3)
        if options['require_ordering'] and not summary.ordering_passed:
            behind = summary.ordering.loc[~summary.ordering['passed'], ['method', 'metric']]
            pairs = ', '.join(f'{m}/{k}' for m, k in behind.itertuples(index=False))
            raise CommandError(f'IA-BMA is behind on {pairs}; see ordering.csv', returncode=4)
        self.stdout.write(
            self.style.SUCCESS(
                f'Run {summary.status}: {summary.completed} repetition(s), results in {summary.output_dir}'
            )
        )
