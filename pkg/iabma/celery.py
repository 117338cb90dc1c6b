"""
Celery configuration for the iabma project.

Workers execute experiment repetitions (``experiments.tasks``); the broker
and result backend come from the CELERY_* settings.
"""
import os
from celery import Celery

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'iabma.settings')

app = Celery('iabma')

# namespace='CELERY' means all celery-related configuration keys
# should have a `CELERY_` prefix.
app.config_from_object('django.conf:settings', namespace='CELERY')

# Load task modules from all registered Django apps.
app.autodiscover_tasks()
