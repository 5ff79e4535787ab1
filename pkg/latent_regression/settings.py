"""
Django settings for latent_regression project.

The project has no web surface: Django provides the management-command
CLI, the settings/logging layer and the test runner.

For more information on this file, see
https://docs.djangoproject.com/en/5.0/topics/settings/
"""

import os
from pathlib import Path
from decouple import config, Csv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = config('SECRET_KEY', default='django-insecure-latent-regression-local-key')

DEBUG = config('DEBUG', default=True, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    # Third party apps
    'rest_framework',

    # Local apps
    'rhlp',
    'model_selection',
    'confidence',
    'baselines',
    'simulation',
    'workbench',
]


# Database
# Nothing is persisted.
DATABASES = {}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# EM / IRLS defaults (FitConfig.from_settings)
RHLP_SEED = config('RHLP_SEED', default=0, cast=int)
RHLP_N_STARTS = config('RHLP_N_STARTS', default=10, cast=int)
RHLP_EM_TOL = config('RHLP_EM_TOL', default=1e-6, cast=float)
RHLP_EM_MAX_ITER = config('RHLP_EM_MAX_ITER', default=1000, cast=int)
RHLP_IRLS_TOL = config('RHLP_IRLS_TOL', default=1e-6, cast=float)
RHLP_IRLS_MAX_ITER = config('RHLP_IRLS_MAX_ITER', default=50, cast=int)
RHLP_THREADS = config('RHLP_THREADS', default=1, cast=int)

# Simulation sweeps
RHLP_BENCHMARK_REPLICATES = config('RHLP_BENCHMARK_REPLICATES', default=10, cast=int)
RHLP_BENCHMARK_SIZES = config(
    'RHLP_BENCHMARK_SIZES', default='100,300,500,1000', cast=Csv(int)
)
RHLP_BENCHMARK_SIGMAS = config(
    'RHLP_BENCHMARK_SIGMAS', default='0.5,1,1.5,2,2.5', cast=Csv(float)
)

# Long-running acceptance tests (minutes each)
RHLP_SLOW_TESTS = config('RHLP_SLOW_TESTS', default=False, cast=bool)


# Logging
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {process:d} {thread:d} {message}',
            'style': '{',
        },
        'simple': {
            'format': '{levelname} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'file': {
            'level': 'INFO',
            'class': 'logging.FileHandler',
            'filename': BASE_DIR / 'logs' / 'latent_regression.log',
            'formatter': 'verbose',
        },
        'console': {
            'level': config('RHLP_CONSOLE_LOG_LEVEL', default='WARNING'),
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'root': {
        'handlers': ['console', 'file'],
        'level': 'INFO',
    },
    'loggers': {
        'django': {
            'handlers': ['console', 'file'],
            'level': 'INFO',
            'propagate': False,
        },
        **{
            app: {
                'handlers': ['console', 'file'],
                'level': config('RHLP_LOG_LEVEL', default='INFO'),
                'propagate': False,
            }
            for app in (
                'rhlp', 'model_selection', 'confidence',
                'baselines', 'simulation', 'workbench',
            )
        },
    },
}

# Create logs directory if it doesn't exist
os.makedirs(BASE_DIR / 'logs', exist_ok=True)
