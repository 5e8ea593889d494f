"""
Django settings for the stealthlab project.
"""

from pathlib import Path
from decouple import config, Csv
import dj_database_url

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# ──────────────────────────────────────────────
# Security
# ──────────────────────────────────────────────
SECRET_KEY = config('SECRET_KEY', default='dev-insecure-key-change-me')
DEBUG = config('DEBUG', default=False, cast=bool)
ALLOWED_HOSTS = config('ALLOWED_HOSTS', default='localhost', cast=Csv())

# ──────────────────────────────────────────────
# Application definition
# ──────────────────────────────────────────────
INSTALLED_APPS = [
    # Project apps
    'core',
    'lab',
]

# ──────────────────────────────────────────────
# Database – run registry (PostgreSQL via DATABASE_URL, SQLite otherwise)
# ──────────────────────────────────────────────
DATABASE_URL = config('DATABASE_URL', default=None)

if DATABASE_URL:
    DATABASES = {
        'default': dj_database_url.parse(DATABASE_URL, conn_max_age=600)
    }
else:
    DB_ENGINE = config('DB_ENGINE', default='django.db.backends.sqlite3')

    if DB_ENGINE == 'django.db.backends.sqlite3':
        DATABASES = {
            'default': {
                'ENGINE': 'django.db.backends.sqlite3',
                'NAME': BASE_DIR / 'db.sqlite3',
            }
        }
    else:
        DATABASES = {
            'default': {
                'ENGINE': DB_ENGINE,
                'NAME': config('DB_NAME', default='stealthlab'),
                'USER': config('DB_USER', default='postgres'),
                'PASSWORD': config('DB_PASSWORD', default='postgres'),
                'HOST': config('DB_HOST', default='localhost'),
                'PORT': config('DB_PORT', default='5432'),
            }
        }

# ──────────────────────────────────────────────
# Internationalization
# ──────────────────────────────────────────────
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

# Default primary key field type
DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# ──────────────────────────────────────────────
# Logging – everything to stderr, stdout is for command output
# ──────────────────────────────────────────────
LOG_LEVEL = config('LOG_LEVEL', default='INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'stderr': {
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'core': {'handlers': ['stderr'], 'level': LOG_LEVEL, 'propagate': False},
        'lab': {'handlers': ['stderr'], 'level': LOG_LEVEL, 'propagate': False},
    },
}

# ──────────────────────────────────────────────
# Lab defaults (every value can be overridden per run from the CLI)
# ──────────────────────────────────────────────
LAB_SEED = config('LAB_SEED', default=7, cast=int)
LAB_RESULTS_DIR = config('LAB_RESULTS_DIR', default=str(BASE_DIR / 'results'))
LAB_SESSION_EPOCHS = config('LAB_SESSION_EPOCHS', default=2000, cast=int)
LAB_TRANSFORMER_EPOCHS = config('LAB_TRANSFORMER_EPOCHS', default=15, cast=int)
LAB_JOBS = config('LAB_JOBS', default=1, cast=int)

# ──────────────────────────────────────────────
# Tests – the slow end-to-end checks run with LAB_ACCEPTANCE=True
# or `manage.py test --tag acceptance`
# ──────────────────────────────────────────────
TEST_RUNNER = 'stealthlab.test_runner.LabTestRunner'
LAB_ACCEPTANCE = config('LAB_ACCEPTANCE', default=False, cast=bool)
