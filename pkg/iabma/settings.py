"""
Django settings for the iabma project.

Environment variables are read through python-dotenv (a ``.env`` file next to
manage.py is honoured). The ``AVERAGING`` dict holds the experiment defaults
that config documents and command-line flags override.
"""

from pathlib import Path
import os
from dotenv import load_dotenv

load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'django-insecure-iabma-local-development-key')

# SECURITY WARNING: don't run with debug turned on in production!
DEBUG = os.getenv('DJANGO_DEBUG', 'true').lower() == 'true'

ALLOWED_HOSTS = [h for h in os.getenv('DJANGO_ALLOWED_HOSTS', 'localhost,127.0.0.1').split(',') if h]


def _env_float(name, default):
    value = os.getenv(name)
    return float(value) if value not in (None, '') else default


def _env_int(name, default):
    value = os.getenv(name)
    return int(value) if value not in (None, '') else default


# Application definition

INSTALLED_APPS = [
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',

    # Third-party apps
    'rest_framework',
    'drf_yasg',

    # Project apps
    'averaging',
    'experiments',
]

# Experiment defaults
AVERAGING = {
    'OUTPUT_DIR': os.getenv('AVERAGING_OUTPUT_DIR', str(BASE_DIR / 'runs')),
    'MASTER_SEED': _env_int('AVERAGING_MASTER_SEED', 0),
    'ECE_BINS': _env_int('AVERAGING_ECE_BINS', 10),
    'MC_SAMPLES': _env_int('AVERAGING_MC_SAMPLES', 64),
    'PRIOR_SCALE': os.getenv('AVERAGING_PRIOR_SCALE', 'sum'),
    'IABMA_TRAIN': {
        'learning_rate': _env_float('AVERAGING_IABMA_LR', 1e-3),
        'batch_size': _env_int('AVERAGING_IABMA_BATCH', 64),
        'epochs': _env_int('AVERAGING_IABMA_EPOCHS', 10),
        'lambda_kl': _env_float('AVERAGING_LAMBDA_KL', 0.05),
    },
    'MOE_TRAIN': {
        'learning_rate': _env_float('AVERAGING_MOE_LR', 1e-3),
        'batch_size': _env_int('AVERAGING_MOE_BATCH', 64),
        'epochs': _env_int('AVERAGING_MOE_EPOCHS', 10),
    },
    'DLA': {
        'k': _env_int('AVERAGING_DLA_K', 50),
        'temperature': _env_float('AVERAGING_DLA_TEMPERATURE', 0.8),
        'smoothing': _env_float('AVERAGING_DLA_SMOOTHING', 1.0),
    },
    'RECORD_RUNS': os.getenv('AVERAGING_RECORD_RUNS', 'true').lower() == 'true',
}

# Celery configuration
CELERY_BROKER_URL = os.getenv('CELERY_BROKER_URL', 'redis://localhost:6379/0')
CELERY_RESULT_BACKEND = os.getenv('CELERY_RESULT_BACKEND', 'redis://localhost:6379/0')
CELERY_ACCEPT_CONTENT = ['json']
CELERY_TASK_SERIALIZER = 'json'
CELERY_RESULT_SERIALIZER = 'json'
CELERY_TIMEZONE = 'UTC'
CELERY_ENABLE_UTC = True

# REST Framework configuration
REST_FRAMEWORK = {
    'DEFAULT_PERMISSION_CLASSES': [
        'rest_framework.permissions.AllowAny',
    ],
    'DEFAULT_PAGINATION_CLASS': 'rest_framework.pagination.PageNumberPagination',
    'PAGE_SIZE': 20,
}

MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.contrib.sessions.middleware.SessionMiddleware',
    'django.middleware.common.CommonMiddleware',
    'django.middleware.csrf.CsrfViewMiddleware',
    'django.contrib.auth.middleware.AuthenticationMiddleware',
    'django.contrib.messages.middleware.MessageMiddleware',
    'django.middleware.clickjacking.XFrameOptionsMiddleware',
]

ROOT_URLCONF = 'iabma.urls'

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.request',
                'django.contrib.auth.context_processors.auth',
                'django.contrib.messages.context_processors.messages',
            ],
        },
    },
]

WSGI_APPLICATION = 'iabma.wsgi.application'


# Database
# Run bookkeeping only; sqlite unless DB_ENGINE points elsewhere.

DATABASES = {
    'default': {
        'ENGINE': os.getenv('DB_ENGINE', 'django.db.backends.sqlite3'),
        'NAME': os.getenv('DB_NAME', str(BASE_DIR / 'db.sqlite3')),
        'USER': os.getenv('DB_USER', ''),
        'PASSWORD': os.getenv('DB_PASSWORD', ''),
        'HOST': os.getenv('DB_HOST', ''),
        'PORT': os.getenv('DB_PORT', ''),
    }
}


# Logging

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': os.getenv('DJANGO_LOG_LEVEL', 'INFO'),
    },
}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True


# Static files (CSS, JavaScript, Images)

STATIC_URL = '/static/'
STATIC_ROOT = os.path.join(BASE_DIR, 'staticfiles')

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'
