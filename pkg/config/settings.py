"""
Django settings for the ReMP project.

The project has no web surface; Django provides the app registry, the
management-command CLI and the test runner. Environment handling follows
django-environ: values come from the process environment or an optional
`.env` file next to manage.py.
"""

from pathlib import Path
import os
import environ

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Load environment variables from .env file
env = environ.Env(DEBUG=(bool, False),)
environ.Env.read_env(os.path.join(BASE_DIR, '.env'))

SECRET_KEY = env("SECRET_KEY", default="remp-local-development")
DEBUG = env("DEBUG")
ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    "rest_framework",
    "numerics",
    "episodes",
    "networks",
    "propagation",
    "objective",
    "training",
    "cli",
]

# No app defines tables; the sqlite entry only keeps Django's defaults happy.
DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": BASE_DIR / "db.sqlite3",
    }
}

LANGUAGE_CODE = "en-us"
TIME_ZONE = "UTC"
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# ===== ReMP runtime =====
# Default run-config file; flags on the command line still win.
REMP_CONFIG_FILE = env("REMP_CONFIG", default="")
REMP_THREADS = env.int("REMP_THREADS", default=1)
REMP_LOG_LEVEL = env("REMP_LOG_LEVEL", default="INFO")

REST_FRAMEWORK = {
    "DEFAULT_RENDERER_CLASSES": (
        "rest_framework.renderers.JSONRenderer",
    ),
    "UNAUTHENTICATED_USER": None,
    "DEFAULT_AUTHENTICATION_CLASSES": (),
    "DEFAULT_PERMISSION_CLASSES": (),
}

# ===== Logging =====
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{asctime} {levelname} {name}: {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "root": {
        "handlers": ["console"],
        "level": REMP_LOG_LEVEL,
    },
}
