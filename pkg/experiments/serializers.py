import math

from django.conf import settings
from rest_framework import serializers

from averaging.baselines import BaselineKind, DLAConfig
from averaging.core import Task
from averaging.exceptions import ArgumentError
from averaging.posterior import TrainConfig
from averaging.predictors import build_predictor
from averaging.prior import PriorScale

from .models import ExperimentRun, RepetitionResult

METHOD_IABMA = 'iabma'
METHOD_CHOICES = [METHOD_IABMA] + [kind.value for kind in BaselineKind]


def _defaults(key):
    return lambda: dict(settings.AVERAGING[key])


class RepetitionResultSerializer(serializers.ModelSerializer):
    class Meta:
        model = RepetitionResult
        fields = ['id', 'repetition', 'seed', 'status', 'metrics', 'theorem', 'notes', 'error', 'created_at']


class ExperimentRunSerializer(serializers.ModelSerializer):
    results = RepetitionResultSerializer(many=True, read_only=True)

    class Meta:
        model = ExperimentRun
        fields = [
            'id', 'name', 'status', 'master_seed', 'repetitions', 'output_dir',
            'theorem_passed', 'error', 'created_at', 'finished_at', 'config', 'results',
        ]


# ---------------------------------------------------------------------------
# experiment configuration
# ---------------------------------------------------------------------------

class DatasetSourceSerializer(serializers.Serializer):
    """
    Either the two-region simulation or a CSV file split per repetition.
    """

    source = serializers.ChoiceField(choices=['simulate', 'csv'], default='simulate')

    # simulation
    n_train = serializers.IntegerField(min_value=2, default=1000)
    n_test = serializers.IntegerField(min_value=2, default=500)
    offset = serializers.FloatField(default=1.0)
    covariance_scale = serializers.FloatField(default=0.1)

    # csv
    path = serializers.CharField(required=False)
    label_col = serializers.CharField(default='label')
    task = serializers.ChoiceField(choices=[t.value for t in Task], default=Task.CLASSIFICATION.value)
    feature_cols = serializers.ListField(child=serializers.CharField(), required=False, allow_empty=False)
    region_col = serializers.CharField(required=False, allow_null=True, default=None)
    test_fraction = serializers.FloatField(default=0.2)
    stratify = serializers.BooleanField(default=True)
    bins = serializers.IntegerField(min_value=1, default=12)
    balance = serializers.BooleanField(default=False)
    standardize = serializers.BooleanField(default=True)

    def validate(self, attrs):
        if attrs['source'] == 'csv':
            if not attrs.get('path'):
                raise serializers.ValidationError({'path': 'A CSV source needs a path.'})
            if not 0 < attrs['test_fraction'] < 1:
                raise serializers.ValidationError({'test_fraction': 'Must lie in (0, 1).'})
        else:
            if not attrs['offset'] > 0:
                raise serializers.ValidationError({'offset': 'Must be > 0.'})
            if not attrs['covariance_scale'] > 0:
                raise serializers.ValidationError({'covariance_scale': 'Must be > 0.'})
            # the simulation is always binary classification
            attrs['task'] = Task.CLASSIFICATION.value
        return attrs


class ExperimentConfigSerializer(serializers.Serializer):
    """
    Validate an experiment document. Missing sections fall back to
    ``settings.AVERAGING``; command-line flags are merged in before validation.
    """

    name = serializers.CharField(required=False, allow_blank=True, default='')
    dataset = DatasetSourceSerializer(required=False)
    roster = serializers.ListField(child=serializers.DictField(), required=False, allow_empty=False)
    methods = serializers.ListField(
        child=serializers.ChoiceField(choices=METHOD_CHOICES), allow_empty=False, default=lambda: list(METHOD_CHOICES)
    )
    iabma = serializers.DictField(required=False, default=_defaults('IABMA_TRAIN'))
    moe = serializers.DictField(required=False, default=_defaults('MOE_TRAIN'))
    dla = serializers.DictField(required=False, default=_defaults('DLA'))
    mc_samples = serializers.IntegerField(min_value=1, default=lambda: settings.AVERAGING['MC_SAMPLES'])
    prior_scale = serializers.ChoiceField(
        choices=[scale.value for scale in PriorScale], default=lambda: settings.AVERAGING['PRIOR_SCALE']
    )
    ece_bins = serializers.IntegerField(min_value=1, default=lambda: settings.AVERAGING['ECE_BINS'])
    repetitions = serializers.IntegerField(min_value=1, default=10)
    output_dir = serializers.CharField(default=lambda: settings.AVERAGING['OUTPUT_DIR'])
    master_seed = serializers.IntegerField(min_value=0, default=lambda: settings.AVERAGING['MASTER_SEED'])

    def validate_methods(self, value):
        duplicates = sorted({m for m in value if value.count(m) > 1})
        if duplicates:
            raise serializers.ValidationError(f"Methods listed twice: {duplicates}.")
        return value

    def _train_section(self, key, values):
        merged = {**settings.AVERAGING[key], **values}
        unknown = sorted(set(merged) - set(TrainConfig.__dataclass_fields__))
        if unknown:
            raise serializers.ValidationError(f"Unknown training settings {unknown}.")
        try:
            TrainConfig.from_dict(merged)
        except (ArgumentError, TypeError) as exc:
            raise serializers.ValidationError(str(exc)) from exc
        return merged

    def validate_iabma(self, value):
        return self._train_section('IABMA_TRAIN', value)

    def validate_moe(self, value):
        return self._train_section('MOE_TRAIN', value)

    def validate_dla(self, value):
        merged = {**settings.AVERAGING['DLA'], **value}
        try:
            DLAConfig(**merged)
        except (ArgumentError, TypeError) as exc:
            raise serializers.ValidationError(str(exc)) from exc
        return merged

    def validate(self, attrs):
        if 'dataset' not in attrs:
            dataset = DatasetSourceSerializer(data={})
            dataset.is_valid(raise_exception=True)
            attrs['dataset'] = dataset.validated_data
        task = Task(attrs['dataset']['task'])

        for index, spec in enumerate(attrs.get('roster', [])):
            try:
                predictor = build_predictor(spec)
            except (ArgumentError, TypeError) as exc:
                raise serializers.ValidationError({'roster': f"Entry {index}: {exc}"}) from exc
            if predictor.task is not task:
                raise serializers.ValidationError(
                    {'roster': f"Entry {index} is a {predictor.task.value} model for a {task.value} dataset."}
                )
        return attrs


# ---------------------------------------------------------------------------
# pure operations exposed over REST
# ---------------------------------------------------------------------------

class PriorDemoQuerySerializer(serializers.Serializer):
    beta1 = serializers.FloatField(default=3.0)
    beta2 = serializers.FloatField(default=1.0)
    baseline = serializers.FloatField(default=math.log(5))
    x_min = serializers.FloatField(default=-3.0)
    x_max = serializers.FloatField(default=3.0)
    steps = serializers.IntegerField(min_value=2, max_value=10_000, default=121)

    def validate(self, attrs):
        if attrs['x_min'] >= attrs['x_max']:
            raise serializers.ValidationError("x_min must be smaller than x_max.")
        for key in ('beta1', 'beta2', 'baseline', 'x_min', 'x_max'):
            if not math.isfinite(attrs[key]):
                raise serializers.ValidationError({key: 'Must be finite.'})
        return attrs


class TheoremCheckSerializer(serializers.Serializer):
    weights = serializers.ListField(child=serializers.ListField(child=serializers.FloatField()), allow_empty=False)
    loglik = serializers.ListField(child=serializers.ListField(child=serializers.FloatField()), allow_empty=False)
    model_names = serializers.ListField(child=serializers.CharField(), required=False)
    tolerance = serializers.FloatField(min_value=0, default=1e-9)

    def validate(self, attrs):
        widths = {len(row) for row in attrs['weights']} | {len(row) for row in attrs['loglik']}
        if len(widths) != 1:
            raise serializers.ValidationError("Every weights and loglik row must have the same number of models.")
        if len(attrs['weights']) != len(attrs['loglik']):
            raise serializers.ValidationError("weights and loglik must have the same number of rows.")
        m = widths.pop()
        names = attrs.get('model_names') or [f"model_{j}" for j in range(m)]
        if len(names) != m:
            raise serializers.ValidationError({'model_names': f"Expected {m} names."})
        attrs['model_names'] = names
        return attrs
