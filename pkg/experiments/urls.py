from django.urls import path, include
from rest_framework.routers import DefaultRouter
from . import views

router = DefaultRouter()
router.register(r'runs', views.ExperimentRunViewSet, basename='experiment-run')

urlpatterns = [
    # Router URLs (/api/experiments/runs/, /api/experiments/runs/<pk>/aggregate/, ...)
    path('experiments/', include(router.urls)),

    path('experiments/prior-demo/', views.PriorDemoView.as_view(), name='prior-demo'),
    path('experiments/theorem-check/', views.TheoremCheckView.as_view(), name='theorem-check'),
]
