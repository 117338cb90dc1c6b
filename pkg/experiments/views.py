from rest_framework import status, viewsets
from rest_framework.decorators import action
from rest_framework.response import Response
from rest_framework.views import APIView

from averaging.core import LikelihoodTable
from averaging.exceptions import ArgumentError
from averaging.metrics import theorem1_check
from averaging.prior import bernoulli_demo, x_grid

from .models import ExperimentRun, RepetitionResult
from .serializers import (
    ExperimentRunSerializer,
    PriorDemoQuerySerializer,
    RepetitionResultSerializer,
    TheoremCheckSerializer,
)


class ExperimentRunViewSet(viewsets.ReadOnlyModelViewSet):
    """
    Recorded experiment runs with their per-repetition results.
    """
    queryset = ExperimentRun.objects.all().prefetch_related('results')
    serializer_class = ExperimentRunSerializer

    def get_queryset(self):
        queryset = super().get_queryset()
        run_status = self.request.query_params.get('status')
        if run_status:
            queryset = queryset.filter(status=run_status)
        return queryset

    @action(detail=True, methods=['get'])
    def aggregate(self, request, pk=None):
        """Rows of the aggregate table, optionally filtered by ?method= and ?metric="""
        run = self.get_object()
        rows = run.aggregate
        method = request.query_params.get('method')
        metric = request.query_params.get('metric')
        if method:
            rows = [row for row in rows if row['method'] == method]
        if metric:
            rows = [row for row in rows if row['metric'] == metric]
        return Response({'run': run.pk, 'status': run.status, 'rows': rows})

    @action(detail=True, methods=['get'])
    def repetitions(self, request, pk=None):
        run = self.get_object()
        results = RepetitionResult.objects.filter(run=run)
        return Response(RepetitionResultSerializer(results, many=True).data)


class PriorDemoView(APIView):
    """
    P(J=1 | x) for two Bernoulli experts under the energy prior with a
    logistic baseline.
    """
    def get(self, request):
        query = PriorDemoQuerySerializer(data=request.query_params)
        query.is_valid(raise_exception=True)
        params = query.validated_data

        grid = x_grid(params['x_min'], params['x_max'], params['steps'])
        frame = bernoulli_demo(params['beta1'], params['beta2'], params['baseline'], grid)
        return Response({
            'beta1': params['beta1'],
            'beta2': params['beta2'],
            'baseline': params['baseline'],
            'rows': [
                {'x': float(x), 'p_j1': float(p)}
                for x, p in zip(frame['x'], frame['p_j1'])
            ],
        })


class TheoremCheckView(APIView):
    """
    Check that a weight matrix never loses to a weighted single model on a
    log-likelihood table.
    """
    def post(self, request):
        payload = TheoremCheckSerializer(data=request.data)
        payload.is_valid(raise_exception=True)
        data = payload.validated_data

        try:
            table = LikelihoodTable(loglik=data['loglik'], model_names=tuple(data['model_names']))
            report = theorem1_check(data['weights'], table, tolerance=data['tolerance'])
        except ArgumentError as e:
            return Response({'detail': str(e)}, status=status.HTTP_400_BAD_REQUEST)

        return Response({
            **report.summary(),
            'row_violation': [float(v) for v in report.row_violation],
            'selector': [data['model_names'][j] for j in report.selector],
        })
