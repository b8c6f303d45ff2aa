"""
Django settings for hamlab project.

Every tunable is read from the environment (or ``.env`` next to manage.py).
The numeric experiments themselves are configured per run through the
management commands; the ``LAB_*`` values below only supply defaults.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/6.0/ref/settings/
"""

import os
from pathlib import Path
from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Load .env file
load_dotenv(BASE_DIR / '.env')


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', "django-insecure-hamlab-local-development-key")

# SECURITY WARNING: don't run with debug turned on in production!
DEBUG = os.getenv('DJANGO_DEBUG', 'true').lower() in ('1', 'true', 'yes')

ALLOWED_HOSTS = [h for h in os.getenv('DJANGO_ALLOWED_HOSTS', '').split(',') if h]


# Application definition

INSTALLED_APPS = [
    "django.contrib.admin",
    "django.contrib.auth",
    "django.contrib.contenttypes",
    "django.contrib.sessions",
    "django.contrib.messages",
    "django.contrib.staticfiles",
    "rest_framework",
    "lab",
]

MIDDLEWARE = [
    "django.middleware.security.SecurityMiddleware",
    "django.contrib.sessions.middleware.SessionMiddleware",
    "django.middleware.common.CommonMiddleware",
    "django.middleware.csrf.CsrfViewMiddleware",
    "django.contrib.auth.middleware.AuthenticationMiddleware",
    "django.contrib.messages.middleware.MessageMiddleware",
    "django.middleware.clickjacking.XFrameOptionsMiddleware",
]

ROOT_URLCONF = "hamlab.urls"

TEMPLATES = [
    {
        "BACKEND": "django.template.backends.django.DjangoTemplates",
        "DIRS": [],
        "APP_DIRS": True,
        "OPTIONS": {
            "context_processors": [
                "django.template.context_processors.request",
                "django.contrib.auth.context_processors.auth",
                "django.contrib.messages.context_processors.messages",
            ],
        },
    },
]

WSGI_APPLICATION = "hamlab.wsgi.application"


# Database
# sqlite by default; LAB_DB_ENGINE=postgres switches to psycopg2

if os.getenv('LAB_DB_ENGINE', 'sqlite') == 'postgres':
    DATABASES = {
        "default": {
            'ENGINE': 'django.db.backends.postgresql',
            'NAME': os.getenv('LAB_DB_NAME', 'hamlab'),
            'USER': os.getenv('LAB_DB_USER', 'postgres'),
            'PASSWORD': os.getenv('LAB_DB_PASSWORD', ''),
            'HOST': os.getenv('LAB_DB_HOST', 'localhost'),
            'PORT': os.getenv('LAB_DB_PORT', '5432'),
        }
    }
else:
    DATABASES = {
        "default": {
            'ENGINE': 'django.db.backends.sqlite3',
            'NAME': os.getenv('LAB_DB_NAME', str(BASE_DIR / 'db.sqlite3')),
        }
    }


# Internationalization

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = True

USE_TZ = True


STATIC_URL = "static/"

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

REST_FRAMEWORK = {
    'DEFAULT_RENDERER_CLASSES': [
        'rest_framework.renderers.JSONRenderer',
        'rest_framework.renderers.BrowsableAPIRenderer',
    ],
}


# Experiment defaults
LAB_DEFAULT_SEED = int(os.getenv('LAB_DEFAULT_SEED', '20240101'))
LAB_DEFAULT_SHARDS = int(os.getenv('LAB_DEFAULT_SHARDS', '4'))
LAB_OUTPUT_ROOT = Path(os.getenv('LAB_OUTPUT_ROOT', str(BASE_DIR / 'runs')))
LAB_LOG_LEVEL = os.getenv('LAB_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'lab': {
            'format': '{levelname} {asctime} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'lab',
        },
    },
    'loggers': {
        'lab': {
            'handlers': ['console'],
            'level': LAB_LOG_LEVEL,
            'propagate': False,
        },
    },
}
